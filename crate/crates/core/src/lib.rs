//! Privacy-preserving multi-robot rendezvous under randomized transmission
//! scheduling.
//!
//! Robots on a weighted undirected graph run a consensus protocol in which
//! each robot broadcasts its noisy position only with probability `p_i` per
//! step and the network otherwise reuses the last broadcast. The crate
//! provides:
//!
//! - [`graph`]: topology validation, `W = I - D + A`, the primitivity
//!   horizon and the ergodicity coefficient of the closed-loop matrices;
//! - [`dynamics`]: a seed-reproducible simulator of the protocol;
//! - [`analytic`]: closed-form `(epsilon, delta)` calibration of pointwise
//!   maximal leakage;
//! - [`empirical`]: exact Gaussian posterior attacks and Monte Carlo audits
//!   of that calibration;
//! - [`convergence`]: Monte Carlo checks of the rendezvous contraction;
//! - [`scenario`]: the JSON scenario format.
//!
//! ```
//! use rendezvous_core::{analytic, dynamics, scenario};
//!
//! let s = scenario::load_config(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/five_robots.json")).unwrap();
//! let traj = dynamics::run(&s, 500, 7).unwrap();
//! assert!(traj.steps.last().unwrap().disagreement < 1e-6);
//!
//! let robot1 = analytic::CalibrationInputs::from_agent(&s.agents[0], s.alpha()[0]).unwrap();
//! let delta = analytic::theorem1_delta(5.0, &robot1, 1e-12).unwrap().delta_min;
//! assert!((delta - 0.02315).abs() < 1e-5);
//! ```

pub mod analytic;
pub mod convergence;
pub mod dynamics;
pub mod empirical;
pub mod graph;
pub mod rng;
pub mod scenario;
pub mod stats;

pub use analytic::{CalibrationInputs, PrivacyBudget};
pub use dynamics::{AgentParams, Point, SimState, TrajectoryRecord};
pub use graph::{DerivedGraphQuantities, Graph};
pub use scenario::{load_config, Scenario, ScenarioConfig};
