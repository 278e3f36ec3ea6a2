//! Rendezvous audit: the `L`-step contraction of the disagreement `V(k)`.
//!
//! Over any window of `L` steps in which every robot transmits, the
//! closed-loop product is `M(I)^L`, whose ergodicity coefficient is at most
//! `1 - epsilon_floor`. That window occurs with probability
//! `p_event = (prod_i p_i)^L`, and the injected noise adds at most `beta(k)`
//! in expectation, so
//!
//! ```text
//! E[V(k + L) | eta(k)] <= (1 - epsilon_floor p_event) V(k) + beta(k).
//! ```
//!
//! [`contraction_check`] estimates the left side by branching many
//! independent continuations off a frozen state.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{self, disagreement, AgentParams, Hooks, NoiseMode, SimState, Simulator};
use crate::graph::{Graph, GraphError};
use crate::rng::RobotStreams;
use crate::scenario::{InitialCondition, Scenario};
use crate::stats;

/// `V(T)` must fall below this for a seed to count as rendezvoused.
pub const RENDEZVOUS_THRESHOLD: f64 = 1e-6;
/// Fraction of seeds that must rendezvous.
pub const RENDEZVOUS_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvergenceError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("need at least one trial")]
    NoTrials,
}

/// `sigma_max(k) = max_i sigma_i q_i^k`.
pub fn sigma_max(k: u64, agents: &[AgentParams]) -> f64 {
    agents.iter().map(|a| a.sigma() * a.q.powf(k as f64)).fold(0.0, f64::max)
}

/// The two Gaussian-maximum constants `(sqrt(2 log N), sqrt(log 2N))`.
///
/// With a single robot there are no pairs, and both are zero.
pub fn gaussian_max_constants(n_agents: usize) -> (f64, f64) {
    if n_agents < 2 {
        return (0.0, 0.0);
    }
    let n = n_agents as f64;
    ((2.0 * n.ln()).sqrt(), (2.0 * n).ln().sqrt())
}

/// The larger of the two constants; a valid bound either way.
pub fn gaussian_max_constant(n_agents: usize) -> f64 {
    let (a, b) = gaussian_max_constants(n_agents);
    a.max(b)
}

/// `beta(k) = sum_{s=0}^{L-1} 2 sigma_max(k+s) c_N`.
pub fn beta(k: u64, horizon: usize, agents: &[AgentParams], n_agents: usize) -> f64 {
    beta_with_constant(k, horizon, agents, gaussian_max_constant(n_agents))
}

fn beta_with_constant(k: u64, horizon: usize, agents: &[AgentParams], constant: f64) -> f64 {
    (0..horizon as u64).map(|s| 2.0 * sigma_max(k + s, agents) * constant).sum()
}

/// `(prod_i p_i)^L`.
pub fn event_probability(agents: &[AgentParams], horizon: usize) -> f64 {
    agents.iter().map(|a| a.p).product::<f64>().powi(horizon as i32)
}

/// Monte Carlo estimate of `E[max_{i,j} ||v_i(k) - v_j(k)||_inf]` and its bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianMaxCheck {
    pub empirical: f64,
    pub standard_error: f64,
    /// `2 sigma_max(k)` times the larger constant.
    pub bound: f64,
    /// `2 sigma_max(k) sqrt(2 log N)`.
    pub bound_sqrt_2_log_n: f64,
    /// `2 sigma_max(k) sqrt(log 2N)`.
    pub bound_sqrt_log_2n: f64,
}

pub fn gaussian_max_check(n_samples: u64, k: u64, agents: &[AgentParams], seed: u64) -> GaussianMaxCheck {
    let samples: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|t| {
            let rows: Vec<[f64; 2]> = agents
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let sd = a.sigma() * a.q.powf(k as f64);
                    let mut s = RobotStreams::new(seed, t, i as u64);
                    [sd * s.noise[0].standard_normal(k), sd * s.noise[1].standard_normal(k)]
                })
                .collect();
            disagreement(&rows)
        })
        .collect();
    let (empirical, standard_error) = stats::mean_and_se(&samples);
    let (c1, c2) = gaussian_max_constants(agents.len());
    let twice_sigma = 2.0 * sigma_max(k, agents);
    GaussianMaxCheck {
        empirical,
        standard_error,
        bound: twice_sigma * c1.max(c2),
        bound_sqrt_2_log_n: twice_sigma * c1,
        bound_sqrt_log_2n: twice_sigma * c2,
    }
}

/// The augmented state `eta(k)` together with the simulator state that
/// continues from it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenState {
    pub k: u64,
    pub disagreement: f64,
    /// State entering step `k + 1`.
    pub next: SimState,
}

/// Runs trial 0 of `scenario` under `seed` up to step `k` and freezes it.
pub fn freeze(scenario: &Scenario, k: u64, seed: u64, hooks: Hooks) -> FrozenState {
    let traj = dynamics::run_trial(scenario, k, seed, 0, hooks);
    let last = traj.steps.last().expect("at least one step is recorded");
    FrozenState { k, disagreement: last.disagreement, next: traj.final_state }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub k: u64,
    #[serde(rename = "L")]
    pub horizon: usize,
    pub v_k: f64,
    pub lhs: f64,
    pub lhs_standard_error: f64,
    pub rhs: f64,
    pub p_event: f64,
    pub beta: f64,
    /// `beta(k)` with each of the two Gaussian-maximum constants.
    pub beta_sqrt_2_log_n: f64,
    pub beta_sqrt_log_2n: f64,
    pub epsilon_floor: f64,
    pub trials: u64,
    pub pass: bool,
}

/// Samples `V(k + L)` over `trials` independent continuations of `frozen`.
///
/// Branch `b` draws from trial index `b + 1`, leaving trial 0 to the run
/// that produced the frozen state.
pub fn branch_disagreements(
    graph: &Graph,
    agents: &[AgentParams],
    frozen: &FrozenState,
    horizon: usize,
    trials: u64,
    seed: u64,
    hooks: Hooks,
) -> Vec<f64> {
    (0..trials)
        .into_par_iter()
        .map(|b| {
            let mut sim = Simulator::new(graph, agents, seed, b + 1).with_hooks(hooks);
            let last = frozen.k + horizon as u64;
            let (_, steps) = sim.advance(frozen.next.clone(), last);
            steps.last().map_or(frozen.disagreement, |s| s.disagreement)
        })
        .collect()
}

/// Checks the contraction inequality from an explicit frozen state.
pub fn contraction_from_state(
    graph: &Graph,
    agents: &[AgentParams],
    frozen: &FrozenState,
    trials: u64,
    seed: u64,
    hooks: Hooks,
) -> Result<ContractionReport, ConvergenceError> {
    if trials == 0 {
        return Err(ConvergenceError::NoTrials);
    }
    let derived = graph.derive_quantities()?;
    let horizon = derived.primitivity_horizon;
    let samples = branch_disagreements(graph, agents, frozen, horizon, trials, seed, hooks);
    let (lhs, se) = stats::mean_and_se(&samples);

    let p_event = event_probability(agents, horizon);
    let (c1, c2) = gaussian_max_constants(graph.n());
    let beta_value = if hooks.noise == NoiseMode::Zero { 0.0 } else { beta(frozen.k, horizon, agents, graph.n()) };
    let rhs = (1.0 - derived.epsilon_floor * p_event) * frozen.disagreement + beta_value;
    Ok(ContractionReport {
        k: frozen.k,
        horizon,
        v_k: frozen.disagreement,
        lhs,
        lhs_standard_error: se,
        rhs,
        p_event,
        beta: beta_value,
        beta_sqrt_2_log_n: beta_with_constant(frozen.k, horizon, agents, c1),
        beta_sqrt_log_2n: beta_with_constant(frozen.k, horizon, agents, c2),
        epsilon_floor: derived.epsilon_floor,
        trials,
        pass: lhs <= rhs + 3.0 * se,
    })
}

/// Freezes `scenario` at step `k` and checks the contraction inequality.
pub fn contraction_check(
    scenario: &Scenario,
    k: u64,
    trials: u64,
    seed: u64,
) -> Result<ContractionReport, ConvergenceError> {
    let frozen = freeze(scenario, k, seed, Hooks::default());
    contraction_from_state(&scenario.graph, &scenario.agents, &frozen, trials, seed, Hooks::default())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub v_final: f64,
    /// `max V` over `[T - L, T]`.
    pub window_max: f64,
    pub v0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RendezvousSummary {
    pub horizon: u64,
    #[serde(rename = "L")]
    pub window: usize,
    pub threshold: f64,
    pub required_fraction: f64,
    pub converged: usize,
    pub per_seed: Vec<SeedOutcome>,
    pub pass: bool,
}

pub fn rendezvous_check(scenario: &Scenario, horizon: u64, seeds: &[u64]) -> Result<RendezvousSummary, ConvergenceError> {
    rendezvous_check_with(scenario, horizon, seeds, Hooks::default(), RENDEZVOUS_THRESHOLD, RENDEZVOUS_FRACTION)
}

pub fn rendezvous_check_with(
    scenario: &Scenario,
    horizon: u64,
    seeds: &[u64],
    hooks: Hooks,
    threshold: f64,
    required_fraction: f64,
) -> Result<RendezvousSummary, ConvergenceError> {
    let window = scenario.graph.derive_quantities()?.primitivity_horizon;
    let per_seed: Vec<SeedOutcome> = seeds
        .par_iter()
        .map(|&seed| {
            let traj = dynamics::run_trial(scenario, horizon, seed, 0, hooks);
            let v = traj.disagreement();
            let start = (horizon as usize).saturating_sub(window);
            SeedOutcome {
                seed,
                v_final: v[horizon as usize],
                window_max: v[start..].iter().copied().fold(0.0, f64::max),
                v0: v[0],
            }
        })
        .collect();
    let converged = per_seed.iter().filter(|s| s.v_final < threshold).count();
    let pass = converged as f64 >= required_fraction * seeds.len() as f64;
    Ok(RendezvousSummary { horizon, window, threshold, required_fraction, converged, per_seed, pass })
}

/// Scenario with the initial condition pinned, for paired comparisons.
pub fn with_fixed_init(scenario: &Scenario, x0: Vec<[f64; 2]>) -> Scenario {
    let mut s = scenario.clone();
    s.init = InitialCondition::Fixed(x0);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Schedule;
    use crate::graph::tests::reference_rows;
    use crate::graph::{build_m, tau_ergodicity};
    use crate::scenario::{AgentConfig, InitConfig, ScenarioConfig};

    fn reference_scenario() -> Scenario {
        Scenario::from_config(&ScenarioConfig {
            graph: reference_rows(),
            agents: vec![AgentConfig { p: 0.6, sigma: 1.0, q: 0.9, prior_mean: [0.0, 0.0], prior_var: 3.0 }; 5],
            init: InitConfig::Sample,
            horizon: 500,
            seed: 42,
            reference: None,
        })
        .unwrap()
    }

    fn silent_agents(n: usize) -> Vec<AgentParams> {
        vec![AgentParams { p: 0.6, sigma2: 0.0, q: 0.9, prior_mean: [0.0; 2], prior_var: 3.0 }; n]
    }

    #[test]
    fn beta_examples() {
        let s = reference_scenario();
        assert_eq!(beta(0, 4, &silent_agents(5), 5), 0.0);
        let expected = 2.0 * (2.0 * 5f64.ln()).sqrt() * (1.0 + 0.9 + 0.81 + 0.729);
        assert!((beta(0, 4, &s.agents, 5) - expected).abs() < 1e-12);
        assert!((beta(0, 4, &s.agents, 5) - 12.34).abs() < 5e-3);
        assert!(beta(2000, 4, &s.agents, 5) < 1e-80);
        let ratio = beta(51, 4, &s.agents, 5) / beta(50, 4, &s.agents, 5);
        assert!((ratio - 0.9).abs() < 1e-3);
    }

    #[test]
    fn beta_decay_follows_slowest_q() {
        let mut agents = reference_scenario().agents;
        agents[2].q = 0.95;
        agents[4].sigma2 = 9.0;
        let ratio = beta(401, 4, &agents, 5) / beta(400, 4, &agents, 5);
        assert!((ratio - 0.95).abs() < 1e-3);
    }

    #[test]
    fn event_probability_examples() {
        let s = reference_scenario();
        assert!((event_probability(&s.agents, 4) - 0.6f64.powi(20)).abs() < 1e-18);
        assert!((event_probability(&s.agents, 4) - 3.656e-5).abs() < 1e-8);
        let mut always = s.agents.clone();
        always.iter_mut().for_each(|a| a.p = 1.0);
        assert_eq!(event_probability(&always, 4), 1.0);
        always[0].p = 1e-9;
        assert!(event_probability(&always, 4) < 1e-30);
    }

    #[test]
    fn gaussian_max_examples() {
        let zero = gaussian_max_check(10_000, 0, &silent_agents(5), 1);
        assert_eq!((zero.empirical, zero.bound), (0.0, 0.0));
        let s = reference_scenario();
        let single = gaussian_max_check(10_000, 0, &s.agents[..1], 1);
        assert_eq!(single.empirical, 0.0);
        let check = gaussian_max_check(100_000, 0, &s.agents, 1);
        assert!(check.empirical <= check.bound);
        assert!(check.bound_sqrt_2_log_n >= check.bound_sqrt_log_2n);
    }

    #[test]
    fn consensus_without_noise_stays_put() {
        let g = Graph::new(&reference_rows()).unwrap();
        let agents = silent_agents(5);
        let c = [0.7, -0.3];
        let frozen = FrozenState { k: 3, disagreement: 0.0, next: SimState { k: 4, x: vec![c; 5], xt: vec![c; 5] } };
        let report = contraction_from_state(&g, &agents, &frozen, 1000, 2, Hooks::default()).unwrap();
        assert_eq!(report.lhs, 0.0);
        assert_eq!(report.rhs, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn contraction_holds_on_reference() {
        let s = reference_scenario();
        for k in [0, 10] {
            let report = contraction_check(&s, k, 2000, 42).unwrap();
            assert!(report.pass, "{report:?}");
            assert_eq!(report.horizon, 4);
        }
    }

    #[test]
    fn offsets_scale_linearly_without_noise() {
        let s = reference_scenario();
        let hooks = Hooks { schedule: Schedule::Random, noise: NoiseMode::Zero };
        let frozen = freeze(&s, 6, 8, Hooks::default());
        let center = [0.25, -0.5];
        let stretch = |p: &[f64; 2]| [center[0] + 2.0 * (p[0] - center[0]), center[1] + 2.0 * (p[1] - center[1])];
        let doubled = FrozenState {
            k: frozen.k,
            disagreement: 2.0 * frozen.disagreement,
            next: SimState {
                k: frozen.next.k,
                x: frozen.next.x.iter().map(stretch).collect(),
                xt: frozen.next.xt.iter().map(stretch).collect(),
            },
        };
        let a = contraction_from_state(&s.graph, &s.agents, &frozen, 500, 9, hooks).unwrap();
        let b = contraction_from_state(&s.graph, &s.agents, &doubled, 500, 9, hooks).unwrap();
        assert!((b.lhs - 2.0 * a.lhs).abs() < 1e-9 * (1.0 + a.lhs));
        assert!(b.pass && a.pass);
    }

    #[test]
    fn noise_free_full_rate_bound() {
        let s = reference_scenario();
        let g = &s.graph;
        let derived = g.derive_quantities().unwrap();
        let l = derived.primitivity_horizon;
        let tau = tau_ergodicity(&build_m(g, &[true; 5]).pow(l as u32)).unwrap();
        let horizon = 60;
        let summary = rendezvous_check_with(&s, horizon, &[1, 2, 3], Hooks::NOISE_FREE_FULL_RATE, 1e-6, 0.95).unwrap();
        for seed in &summary.per_seed {
            let bound = tau.powi((horizon as usize / l) as i32) * seed.v0;
            assert!(seed.v_final <= bound + 1e-15, "{} > {bound}", seed.v_final);
        }
    }

    #[test]
    fn single_agent_never_disagrees() {
        let g = Graph::new(&[vec![0.0]]).unwrap();
        let agents = vec![AgentParams::new(0.5, 1.0, 0.9, [0.0; 2], 3.0).unwrap()];
        let traj = Simulator::new(&g, &agents, 4, 0).run_from(vec![[1.0, 2.0]], false, 100);
        assert!(traj.steps.iter().all(|s| s.disagreement == 0.0));
    }

    #[test]
    fn reference_rendezvous_small() {
        let s = reference_scenario();
        let seeds: Vec<u64> = (0..10).collect();
        let summary = rendezvous_check(&s, 500, &seeds).unwrap();
        assert!(summary.pass);
        assert_eq!(summary.window, 4);
    }
}
