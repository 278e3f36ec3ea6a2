//! Ground-truth leakage of the initial positions.
//!
//! The eavesdropper sees every broadcast `x_tilde_j(0..=t)` and every schedule
//! bit `gamma_j(0..=t)`. Subtracting the part of `x_tilde_i(k)` explained by
//! earlier broadcasts leaves the innovation
//!
//! ```text
//! z_i(k) = gamma_i(k) (alpha_i^k x_i(0) + v_i(k)),
//! ```
//!
//! a linear-Gaussian observation of `x_i(0)`. With the prior
//! `N(mu_i, r_i I_2)` the posterior is Gaussian and isotropic, and the
//! pointwise maximal leakage has the closed form
//!
//! ```text
//! l = log(r / tau^2) + |m - mu|^2 / (2 (r - tau^2)).
//! ```

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analytic::{self, CalibrationError, CalibrationInputs};
use crate::dynamics::{self, AgentParams, Hooks, Point};
use crate::graph::Graph;
use crate::rng::RobotStreams;
use crate::scenario::{InitialCondition, Scenario};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error("posterior variance {var} exceeds prior variance {prior_var}")]
    VarianceIncrease { var: f64, prior_var: f64 },
    #[error("robot {0} does not exist")]
    NoSuchRobot(usize),
    #[error("need at least one trial")]
    NoTrials,
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

/// Everything the eavesdropper has seen up to step `t`, indexed `[k][robot]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EavesdropperView {
    pub outputs: Vec<Vec<Point>>,
    pub gamma: Vec<Vec<bool>>,
}

impl EavesdropperView {
    pub fn from_trajectory(traj: &dynamics::TrajectoryRecord) -> Self {
        Self { outputs: traj.output_history(), gamma: traj.gamma_history() }
    }

    pub fn steps(&self) -> usize {
        self.outputs.len()
    }
}

/// `z[k][robot]`; zero rows wherever the robot was silent.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationSequence {
    pub z: Vec<Vec<Point>>,
}

impl InnovationSequence {
    /// Robot `i`'s innovations over time.
    pub fn robot(&self, i: usize) -> Vec<Point> {
        self.z.iter().map(|row| row[i]).collect()
    }
}

// sum_j a_ij x_tilde_j(k) for every i
fn neighbour_pull(graph: &Graph, outputs: &[Point]) -> Vec<Point> {
    let n = graph.n();
    (0..n)
        .map(|i| {
            let mut acc = [0.0; 2];
            for (j, out) in outputs.iter().enumerate() {
                let a = graph.weight(i, j);
                if a != 0.0 {
                    acc[0] += a * out[0];
                    acc[1] += a * out[1];
                }
            }
            acc
        })
        .collect()
}

/// Strips the predictable part from every broadcast.
///
/// Uses only observed data: `h_i(k) = sum_{s<k} alpha_i^(k-1-s) sum_j a_ij x_tilde_j(s)`
/// is accumulated as `h_i(k+1) = alpha_i h_i(k) + sum_j a_ij x_tilde_j(k)`.
pub fn innovation_transform(view: &EavesdropperView, graph: &Graph) -> InnovationSequence {
    let n = graph.n();
    let alpha = graph.alpha();
    let mut history = vec![[0.0; 2]; n];
    let mut z = Vec::with_capacity(view.steps());
    for (outputs, gamma) in view.outputs.iter().zip(&view.gamma) {
        let row = (0..n)
            .map(|i| {
                if gamma[i] {
                    [outputs[i][0] - history[i][0], outputs[i][1] - history[i][1]]
                } else {
                    [0.0; 2]
                }
            })
            .collect();
        z.push(row);
        let pull = neighbour_pull(graph, outputs);
        for i in 0..n {
            for c in 0..2 {
                history[i][c] = alpha[i] * history[i][c] + pull[i][c];
            }
        }
    }
    InnovationSequence { z }
}

/// Inverse of [`innovation_transform`], starting from the hold values
/// `x_tilde_i(-1) = prior_means[i]`.
pub fn reconstruct_view(
    z: &InnovationSequence,
    gamma: &[Vec<bool>],
    graph: &Graph,
    prior_means: &[Point],
) -> EavesdropperView {
    let n = graph.n();
    let alpha = graph.alpha();
    let mut history = vec![[0.0; 2]; n];
    let mut held = prior_means.to_vec();
    let mut outputs = Vec::with_capacity(z.z.len());
    for (zk, gk) in z.z.iter().zip(gamma) {
        for i in 0..n {
            if gk[i] {
                held[i] = [zk[i][0] + history[i][0], zk[i][1] + history[i][1]];
            }
        }
        let pull = neighbour_pull(graph, &held);
        for i in 0..n {
            for c in 0..2 {
                history[i][c] = alpha[i] * history[i][c] + pull[i][c];
            }
        }
        outputs.push(held.clone());
    }
    EavesdropperView { outputs, gamma: gamma.to_vec() }
}

/// Gaussian posterior `N(mean, var I_2)` of one robot's initial position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSummary {
    pub mean: Point,
    pub var: f64,
    /// `s = sum_{k: gamma=1} alpha^(2k) / sigma^2(k)`, so `1/var = 1/r + s`.
    pub precision_gain: f64,
}

/// Accumulates conjugate updates one observation at a time.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorAccumulator {
    prior_mean: Point,
    prior_var: f64,
    gain: f64,
    weighted: Point,
}

impl PosteriorAccumulator {
    pub fn new(prior_mean: Point, prior_var: f64) -> Self {
        Self { prior_mean, prior_var, gain: 0.0, weighted: [0.0; 2] }
    }

    /// Folds in `z = coeff * x0 + v`, `v ~ N(0, noise_var I_2)`.
    #[inline]
    pub fn observe(&mut self, z: Point, coeff: f64, noise_var: f64) {
        let w = coeff / noise_var;
        self.gain += w * coeff;
        self.weighted[0] += w * z[0];
        self.weighted[1] += w * z[1];
    }

    pub fn summary(&self) -> PosteriorSummary {
        let r = self.prior_var;
        let var = r / (1.0 + r * self.gain);
        let mean = [
            var * (self.prior_mean[0] / r + self.weighted[0]),
            var * (self.prior_mean[1] / r + self.weighted[1]),
        ];
        PosteriorSummary { mean, var, precision_gain: self.gain }
    }
}

/// Posterior of `x_i(0)` from robot `i`'s innovations and schedule bits.
pub fn posterior(z: &[Point], gamma: &[bool], params: &AgentParams, alpha: f64) -> PosteriorSummary {
    let mut acc = PosteriorAccumulator::new(params.prior_mean, params.prior_var);
    for (k, (zk, &g)) in z.iter().zip(gamma).enumerate() {
        if g {
            acc.observe(*zk, alpha.powi(k as i32), params.noise_variance(k as u64));
        }
    }
    acc.summary()
}

/// Leakage split into its deterministic and chi-square parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakageParts {
    /// `log(r / tau^2)`.
    pub log_ratio: f64,
    /// `|m - mu|^2 / (r - tau^2)`.
    pub xi: f64,
}

impl LeakageParts {
    pub fn total(&self) -> f64 {
        self.log_ratio + 0.5 * self.xi
    }
}

pub fn leakage_parts(post: &PosteriorSummary, prior_mean: Point, prior_var: f64) -> Result<LeakageParts, AuditError> {
    let r = prior_var;
    if post.var > r * (1.0 + 1e-12) {
        return Err(AuditError::VarianceIncrease { var: post.var, prior_var: r });
    }
    let shift2 = (post.mean[0] - prior_mean[0]).powi(2) + (post.mean[1] - prior_mean[1]).powi(2);
    // r s, recovered from the gain when available for accuracy at small s
    let rs = if post.precision_gain > 0.0 { r * post.precision_gain } else { r / post.var - 1.0 };
    if rs <= 0.0 {
        let xi = if shift2 == 0.0 { 0.0 } else { f64::INFINITY };
        return Ok(LeakageParts { log_ratio: 0.0, xi });
    }
    // r - tau^2 = r * rs / (1 + rs)
    let gap = r * rs / (1.0 + rs);
    Ok(LeakageParts { log_ratio: rs.ln_1p(), xi: shift2 / gap })
}

/// Exact pointwise maximal leakage from `x_i(0)` to the eavesdropper.
pub fn leakage_sample(post: &PosteriorSummary, prior_mean: Point, prior_var: f64) -> Result<f64, AuditError> {
    leakage_parts(post, prior_mean, prior_var).map(|p| p.total())
}

/// One robot's mechanism, as needed to sample its innovations directly.
#[derive(Debug, Clone, Copy)]
pub struct RobotModel {
    pub params: AgentParams,
    pub alpha: f64,
}

/// One audited trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub posterior: PosteriorSummary,
    pub parts: LeakageParts,
    /// First step with `gamma = 1`, if any.
    pub first_transmission: Option<u64>,
}

impl TrialOutcome {
    pub fn leakage(&self) -> f64 {
        self.parts.total()
    }
}

/// Samples robot `robot`'s innovations for one trial straight from their
/// closed form, using the same draw keys as a full network simulation.
///
/// `pattern` replaces the random schedule when given (steps past its end
/// are silent).
pub fn sample_trial(
    model: &RobotModel,
    robot: usize,
    horizon: u64,
    seed: u64,
    trial: u64,
    pattern: Option<&[bool]>,
) -> TrialOutcome {
    let params = &model.params;
    let mut streams = RobotStreams::new(seed, trial, robot as u64);
    let sd0 = params.prior_var.sqrt();
    let x0 = [
        params.prior_mean[0] + sd0 * streams.init[0].standard_normal(0),
        params.prior_mean[1] + sd0 * streams.init[1].standard_normal(0),
    ];
    let mut acc = PosteriorAccumulator::new(params.prior_mean, params.prior_var);
    let mut first = None;
    let mut coeff = 1.0;
    for k in 0..=horizon {
        let transmit = match pattern {
            Some(p) => p.get(k as usize).copied().unwrap_or(false),
            None => streams.gamma.bernoulli(k, params.p),
        };
        if transmit {
            first.get_or_insert(k);
            let var = params.noise_variance(k);
            let sd = var.sqrt();
            let v = [sd * streams.noise[0].standard_normal(k), sd * streams.noise[1].standard_normal(k)];
            let z = [coeff * x0[0] + v[0], coeff * x0[1] + v[1]];
            acc.observe(z, coeff, var);
        }
        coeff *= model.alpha;
    }
    let posterior = acc.summary();
    let parts = leakage_parts(&posterior, params.prior_mean, params.prior_var)
        .expect("conjugate updates never increase variance");
    TrialOutcome { posterior, parts, first_transmission: first }
}

/// Leakage of `robot` in trials `0..trials`, sampled directly.
pub fn leakage_samples_direct(
    model: &RobotModel,
    robot: usize,
    trials: u64,
    horizon: u64,
    seed: u64,
    pattern: Option<&[bool]>,
) -> Vec<TrialOutcome> {
    (0..trials)
        .into_par_iter()
        .map(|t| sample_trial(model, robot, horizon, seed, t, pattern))
        .collect()
}

/// Leakage of `robot` in trials `0..trials`, from full network simulations
/// passed through [`innovation_transform`]. Initial positions are sampled
/// from the prior regardless of the scenario's init mode.
pub fn leakage_samples_full(
    scenario: &Scenario,
    robot: usize,
    trials: u64,
    horizon: u64,
    seed: u64,
) -> Vec<f64> {
    let mut sampled = scenario.clone();
    sampled.init = InitialCondition::Sample;
    let alpha = scenario.alpha()[robot];
    let params = scenario.agents[robot];
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let traj = dynamics::run_trial(&sampled, horizon, seed, t, Hooks::default());
            let view = EavesdropperView::from_trajectory(&traj);
            let z = innovation_transform(&view, &scenario.graph);
            let gamma: Vec<bool> = view.gamma.iter().map(|g| g[robot]).collect();
            let post = posterior(&z.robot(robot), &gamma, &params, alpha);
            leakage_sample(&post, params.prior_mean, params.prior_var).expect("valid posterior")
        })
        .collect()
}

/// Report emitted by the `audit-privacy` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    /// 1-based robot number.
    pub robot: usize,
    pub epsilon: f64,
    pub trials: u64,
    pub horizon: u64,
    pub seed: u64,
    pub coverage: f64,
    pub wilson_ci: (f64, f64),
    pub delta_theorem1: f64,
    pub delta_corollary: Option<f64>,
    /// `1 - delta_theorem1 - 3 sqrt(delta (1 - delta) / trials)`.
    pub required_coverage: f64,
    pub pass: bool,
}

/// Estimates `P[l <= eps]` for robot `robot` (0-based) and checks it against
/// the series bound.
pub fn monte_carlo_audit(
    scenario: &Scenario,
    robot: usize,
    eps: f64,
    trials: u64,
    horizon: u64,
    seed: u64,
) -> Result<AuditReport, AuditError> {
    if robot >= scenario.n() {
        return Err(AuditError::NoSuchRobot(robot + 1));
    }
    if trials == 0 {
        return Err(AuditError::NoTrials);
    }
    let model = RobotModel { params: scenario.agents[robot], alpha: scenario.alpha()[robot] };
    let inputs = CalibrationInputs::from_agent(&model.params, model.alpha)?;
    let covered = coverage_count(&model, robot, eps, trials, horizon, seed);
    let coverage = covered as f64 / trials as f64;

    let delta = analytic::theorem1_delta(eps, &inputs, analytic::DEFAULT_TOLERANCE)?.delta_min;
    let delta_corollary = analytic::calibrate_corollary(eps, 0.0, &inputs).ok().map(|c| c.implied_delta);
    let required = 1.0 - delta - 3.0 * stats::binomial_se(delta, trials);
    Ok(AuditReport {
        robot: robot + 1,
        epsilon: eps,
        trials,
        horizon,
        seed,
        coverage,
        wilson_ci: stats::wilson_interval(covered, trials, stats::Z_99),
        delta_theorem1: delta,
        delta_corollary,
        required_coverage: required,
        pass: coverage >= required,
    })
}

/// Number of trials in `0..trials` with leakage at most `eps`.
pub fn coverage_count(model: &RobotModel, robot: usize, eps: f64, trials: u64, horizon: u64, seed: u64) -> u64 {
    (0..trials)
        .into_par_iter()
        .filter(|&t| sample_trial(model, robot, horizon, seed, t, None).leakage() <= eps)
        .count() as u64
}
