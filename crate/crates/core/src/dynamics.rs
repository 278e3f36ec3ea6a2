//! Randomized-scheduling rendezvous dynamics.
//!
//! At every step `k` each robot flips a `Bernoulli(p_i)` coin. On success it
//! broadcasts `x_i(k) + v_i(k)` with `v_i(k) ~ N(0, q_i^(2k) sigma_i^2 I_2)`;
//! otherwise the network keeps using its previous broadcast. The hold value
//! starts at the public prior mean `mu_i`. Positions then move by
//! `x_i(k+1) = x_i(k) + sum_j a_ij (x_tilde_j(k) - x_i(k))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::rng::RobotStreams;
use crate::scenario::{InitialCondition, Scenario, ScenarioError};

/// A point in the plane.
pub type Point = [f64; 2];

/// Noise variances are clamped here instead of decaying into subnormals.
pub const MIN_NOISE_VARIANCE: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("p must be in (0,1], got {0}")]
    Probability(f64),
    #[error("sigma must be > 0, got variance {0}")]
    NoiseVariance(f64),
    #[error("q must be in (0,1), got {0}")]
    Decay(f64),
    #[error("prior_var must be > 0, got {0}")]
    PriorVariance(f64),
    #[error("prior_mean must be finite")]
    PriorMean,
}

/// Per-robot mechanism and prior parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    /// Transmission probability.
    pub p: f64,
    /// Initial noise variance `sigma_i^2`.
    pub sigma2: f64,
    /// Per-step decay of the noise standard deviation.
    pub q: f64,
    pub prior_mean: Point,
    pub prior_var: f64,
}

impl AgentParams {
    pub fn new(p: f64, sigma2: f64, q: f64, prior_mean: Point, prior_var: f64) -> Result<Self, ParamError> {
        let params = Self { p, sigma2, q, prior_mean, prior_var };
        match params.violations().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(params),
        }
    }

    pub fn violations(&self) -> Vec<ParamError> {
        let mut out = Vec::new();
        if !(self.p > 0.0 && self.p <= 1.0) {
            out.push(ParamError::Probability(self.p));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            out.push(ParamError::NoiseVariance(self.sigma2));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            out.push(ParamError::Decay(self.q));
        }
        if !(self.prior_var > 0.0 && self.prior_var.is_finite()) {
            out.push(ParamError::PriorVariance(self.prior_var));
        }
        if !self.prior_mean.iter().all(|m| m.is_finite()) {
            out.push(ParamError::PriorMean);
        }
        out
    }

    /// `sigma_i^2(k) = q_i^(2k) sigma_i^2`, floored at [`MIN_NOISE_VARIANCE`].
    pub fn noise_variance(&self, k: u64) -> f64 {
        if self.sigma2 == 0.0 {
            return 0.0;
        }
        let decay = self.q.powi(2).powf(k as f64);
        (decay * self.sigma2).max(MIN_NOISE_VARIANCE)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// Simulator state entering step `k`: positions `x(k)` and the held outputs
/// `x_tilde(k-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub k: u64,
    pub x: Vec<Point>,
    pub xt: Vec<Point>,
}

impl SimState {
    /// Initial state with the hold values at the prior means.
    pub fn initial(x0: Vec<Point>, agents: &[AgentParams]) -> Self {
        let xt = agents.iter().map(|a| a.prior_mean).collect();
        Self { k: 0, x: x0, xt }
    }
}

/// Everything that happened at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: u64,
    pub gamma: Vec<bool>,
    /// Realized `v_i(k)`; zero rows where the robot stayed silent.
    pub noise: Vec<Point>,
    /// `x(k)`.
    pub x: Vec<Point>,
    /// `x_tilde(k)`.
    pub xt: Vec<Point>,
    /// `V(k)` over the augmented rows `(x_i(k), x_tilde_i(k))`.
    pub disagreement: f64,
}

impl StepRecord {
    pub fn augmented(&self) -> Vec<[f64; 4]> {
        augment(&self.x, &self.xt)
    }
}

/// A complete run, from the initial positions to the final recorded step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub trial: u64,
    pub sampled_init: bool,
    pub x0: Vec<Point>,
    pub steps: Vec<StepRecord>,
    /// State entering the step after the last recorded one.
    pub final_state: SimState,
}

impl TrajectoryRecord {
    pub fn disagreement(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.disagreement).collect()
    }

    pub fn gamma_history(&self) -> Vec<Vec<bool>> {
        self.steps.iter().map(|s| s.gamma.clone()).collect()
    }

    pub fn output_history(&self) -> Vec<Vec<Point>> {
        self.steps.iter().map(|s| s.xt.clone()).collect()
    }
}

/// Scheduling override for degenerate test runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Random,
    AlwaysTransmit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    #[default]
    Sampled,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Hooks {
    pub schedule: Schedule,
    pub noise: NoiseMode,
}

impl Hooks {
    pub const NOISE_FREE_FULL_RATE: Hooks = Hooks { schedule: Schedule::AlwaysTransmit, noise: NoiseMode::Zero };
}

/// Advances `state` by one step of the protocol.
///
/// `streams[i]` supplies robot `i`'s draws; the slot used is the step index,
/// so the result does not depend on what was drawn before.
pub fn step(
    state: &SimState,
    graph: &Graph,
    agents: &[AgentParams],
    streams: &mut [RobotStreams],
    hooks: Hooks,
) -> (SimState, StepRecord) {
    let n = graph.n();
    let k = state.k;
    let mut gamma = vec![false; n];
    let mut noise = vec![[0.0; 2]; n];
    let mut xt = state.xt.clone();

    for i in 0..n {
        let transmit = match hooks.schedule {
            Schedule::Random => streams[i].gamma.bernoulli(k, agents[i].p),
            Schedule::AlwaysTransmit => true,
        };
        if !transmit {
            continue;
        }
        gamma[i] = true;
        if hooks.noise == NoiseMode::Sampled {
            let sd = agents[i].noise_variance(k).sqrt();
            for (c, stream) in streams[i].noise.iter_mut().enumerate() {
                noise[i][c] = sd * stream.standard_normal(k);
            }
        }
        for c in 0..2 {
            xt[i][c] = state.x[i][c] + noise[i][c];
        }
    }

    let degrees = graph.degrees();
    let next_x = (0..n)
        .map(|i| {
            let mut pull = [0.0; 2];
            for j in 0..n {
                let a = graph.weight(i, j);
                if a != 0.0 {
                    pull[0] += a * xt[j][0];
                    pull[1] += a * xt[j][1];
                }
            }
            let self_weight = 1.0 - degrees[i];
            [
                self_weight * state.x[i][0] + pull[0],
                self_weight * state.x[i][1] + pull[1],
            ]
        })
        .collect();

    let record = StepRecord {
        k,
        disagreement: disagreement(&augment(&state.x, &xt)),
        gamma,
        noise,
        x: state.x.clone(),
        xt: xt.clone(),
    };
    (SimState { k: k + 1, x: next_x, xt }, record)
}

/// Draws `x_i(0) ~ N(mu_i, r_i I_2)` from the init streams.
pub fn sample_initial(agents: &[AgentParams], streams: &mut [RobotStreams]) -> Vec<Point> {
    agents
        .iter()
        .zip(streams.iter_mut())
        .map(|(a, s)| {
            let sd = a.prior_var.sqrt();
            [
                a.prior_mean[0] + sd * s.init[0].standard_normal(0),
                a.prior_mean[1] + sd * s.init[1].standard_normal(0),
            ]
        })
        .collect()
}

/// Drives the step recurrence for one `(seed, trial)` pair.
///
/// This is the unvalidated core used by [`run`]; callers guarantee that
/// `agents` matches `graph`.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    graph: &'a Graph,
    agents: &'a [AgentParams],
    streams: Vec<RobotStreams>,
    hooks: Hooks,
    seed: u64,
    trial: u64,
}

impl<'a> Simulator<'a> {
    pub fn new(graph: &'a Graph, agents: &'a [AgentParams], seed: u64, trial: u64) -> Self {
        assert_eq!(graph.n(), agents.len(), "one AgentParams per node");
        let streams = (0..graph.n() as u64).map(|i| RobotStreams::new(seed, trial, i)).collect();
        Self { graph, agents, streams, hooks: Hooks::default(), seed, trial }
    }

    pub fn with_hooks(mut self, hooks: Hooks) -> Self {
        self.hooks = hooks;
        self
    }

    pub fn sample_initial(&mut self) -> Vec<Point> {
        sample_initial(self.agents, &mut self.streams)
    }

    pub fn step(&mut self, state: &SimState) -> (SimState, StepRecord) {
        step(state, self.graph, self.agents, &mut self.streams, self.hooks)
    }

    /// Records steps `state.k ..= last`.
    pub fn advance(&mut self, mut state: SimState, last: u64) -> (SimState, Vec<StepRecord>) {
        let mut steps = Vec::with_capacity(last.saturating_sub(state.k) as usize + 1);
        while state.k <= last {
            let (next, rec) = self.step(&state);
            steps.push(rec);
            state = next;
        }
        (state, steps)
    }

    /// Runs steps `0 ..= horizon` from `x0`.
    pub fn run_from(&mut self, x0: Vec<Point>, sampled_init: bool, horizon: u64) -> TrajectoryRecord {
        let initial = SimState::initial(x0.clone(), self.agents);
        let (final_state, steps) = self.advance(initial, horizon);
        TrajectoryRecord { seed: self.seed, trial: self.trial, sampled_init, x0, steps, final_state }
    }
}

/// Runs a validated scenario for `horizon` steps (records `k = 0..=horizon`).
pub fn run(scenario: &Scenario, horizon: u64, seed: u64) -> Result<TrajectoryRecord, ScenarioError> {
    run_with_hooks(scenario, horizon, seed, Hooks::default())
}

pub fn run_with_hooks(
    scenario: &Scenario,
    horizon: u64,
    seed: u64,
    hooks: Hooks,
) -> Result<TrajectoryRecord, ScenarioError> {
    scenario.validate()?;
    if horizon == 0 {
        return Err(ScenarioError::single(crate::scenario::Violation::Horizon));
    }
    Ok(run_trial(scenario, horizon, seed, 0, hooks))
}

/// One trial of a scenario without re-validating it.
pub fn run_trial(scenario: &Scenario, horizon: u64, seed: u64, trial: u64, hooks: Hooks) -> TrajectoryRecord {
    let mut sim = Simulator::new(&scenario.graph, &scenario.agents, seed, trial).with_hooks(hooks);
    let (x0, sampled) = match &scenario.init {
        InitialCondition::Fixed(x0) => (x0.clone(), false),
        InitialCondition::Sample => (sim.sample_initial(), true),
    };
    sim.run_from(x0, sampled, horizon)
}

pub fn augment(x: &[Point], xt: &[Point]) -> Vec<[f64; 4]> {
    x.iter().zip(xt).map(|(a, b)| [a[0], a[1], b[0], b[1]]).collect()
}

/// `V = max_{i,j} ||eta_i - eta_j||_inf`.
///
/// Computed as the largest per-coordinate range, which equals the pairwise
/// maximum.
pub fn disagreement<const D: usize>(eta: &[[f64; D]]) -> f64 {
    let mut worst: f64 = 0.0;
    for c in 0..D {
        let (lo, hi) = eta
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), row| (lo.min(row[c]), hi.max(row[c])));
        if lo.is_finite() {
            worst = worst.max(hi - lo);
        }
    }
    worst
}
