//! Scenario configuration: the JSON file format and its validation.
//!
//! ```json
//! {
//!   "graph": [[0.0, 0.3], [0.3, 0.0]],
//!   "agents": [{"p": 0.6, "sigma": 1.0, "q": 0.9, "prior_mean": [0.0, 0.0], "prior_var": 3.0}, ...],
//!   "init": {"mode": "sample"},
//!   "horizon": 500,
//!   "seed": 42
//! }
//! ```
//!
//! `init` may instead be `{"mode": "fixed", "x0": [[x, y], ...]}`. An optional
//! `reference` block carries externally published `delta` lower bounds at a
//! given `epsilon`; `calibrate` prints them next to the computed values.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{AgentParams, ParamError, Point};
use crate::graph::{Graph, GraphError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub p: f64,
    /// Noise standard deviation at `k = 0`.
    pub sigma: f64,
    pub q: f64,
    pub prior_mean: Point,
    pub prior_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitConfig {
    Sample,
    Fixed { x0: Vec<Point> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceValues {
    pub epsilon: f64,
    pub delta: Vec<f64>,
}

/// The on-disk scenario, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub graph: Vec<Vec<f64>>,
    pub agents: Vec<AgentConfig>,
    pub init: InitConfig,
    pub horizon: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceValues>,
}

/// One reason a scenario is rejected. Robot numbers in messages are 1-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("graph: {0}")]
    Graph(GraphError),
    #[error("robot {}: {err}", .robot + 1)]
    Agent { robot: usize, err: ParamError },
    #[error("sigma must be > 0 for robot {}, got {sigma}", .robot + 1)]
    Sigma { robot: usize, sigma: f64 },
    #[error("alpha < q violated for robot {}: alpha = {alpha}, q = {q}", .robot + 1)]
    AlphaNotBelowQ { robot: usize, alpha: f64, q: f64 },
    #[error("expected {expected} agents (one per graph node), got {got}")]
    AgentCount { expected: usize, got: usize },
    #[error("fixed init must list {expected} positions, got {got}")]
    InitCount { expected: usize, got: usize },
    #[error("fixed init position for robot {} is not finite", .robot + 1)]
    InitNonFinite { robot: usize },
    #[error("horizon must be >= 1")]
    Horizon,
    #[error("reference delta list has {got} entries, expected {expected}")]
    ReferenceCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ScenarioError {
    pub violations: Vec<Violation>,
}

impl ScenarioError {
    pub fn single(v: Violation) -> Self {
        Self { violations: vec![v] }
    }
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid scenario ({} violation", self.violations.len())?;
        if self.violations.len() != 1 {
            write!(f, "s")?;
        }
        write!(f, ")")?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] ScenarioError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Sample,
    Fixed(Vec<Point>),
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub graph: Graph,
    pub agents: Vec<AgentParams>,
    pub init: InitialCondition,
    pub horizon: u64,
    pub seed: u64,
    pub reference: Option<ReferenceValues>,
}

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self, ScenarioError> {
        let mut violations: Vec<Violation> = Graph::violations(&cfg.graph).into_iter().map(Violation::Graph).collect();
        let graph = if violations.is_empty() { Graph::new(&cfg.graph).ok() } else { None };

        let mut agents = Vec::with_capacity(cfg.agents.len());
        for (robot, a) in cfg.agents.iter().enumerate() {
            if !(a.sigma > 0.0 && a.sigma.is_finite()) {
                violations.push(Violation::Sigma { robot, sigma: a.sigma });
            }
            let params = AgentParams { p: a.p, sigma2: a.sigma * a.sigma, q: a.q, prior_mean: a.prior_mean, prior_var: a.prior_var };
            violations.extend(
                params
                    .violations()
                    .into_iter()
                    .filter(|e| !matches!(e, ParamError::NoiseVariance(_)))
                    .map(|err| Violation::Agent { robot, err }),
            );
            agents.push(params);
        }

        let n = cfg.graph.len();
        if cfg.agents.len() != n {
            violations.push(Violation::AgentCount { expected: n, got: cfg.agents.len() });
        }
        if let Some(g) = &graph {
            for (robot, (alpha, a)) in g.alpha().into_iter().zip(&cfg.agents).enumerate() {
                if !(alpha < a.q) {
                    violations.push(Violation::AlphaNotBelowQ { robot, alpha, q: a.q });
                }
            }
        }

        let init = match &cfg.init {
            InitConfig::Sample => InitialCondition::Sample,
            InitConfig::Fixed { x0 } => {
                if x0.len() != n {
                    violations.push(Violation::InitCount { expected: n, got: x0.len() });
                }
                for (robot, p) in x0.iter().enumerate() {
                    if !p.iter().all(|v| v.is_finite()) {
                        violations.push(Violation::InitNonFinite { robot });
                    }
                }
                InitialCondition::Fixed(x0.clone())
            }
        };
        if cfg.horizon == 0 {
            violations.push(Violation::Horizon);
        }
        if let Some(r) = &cfg.reference {
            if r.delta.len() != n {
                violations.push(Violation::ReferenceCount { expected: n, got: r.delta.len() });
            }
        }

        match (graph, violations.is_empty()) {
            (Some(graph), true) => Ok(Self {
                graph,
                agents,
                init,
                horizon: cfg.horizon,
                seed: cfg.seed,
                reference: cfg.reference.clone(),
            }),
            _ => Err(ScenarioError { violations }),
        }
    }

    /// Re-checks the cross-field constraints; useful after mutating fields.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        Self::from_config(&self.to_config()).map(|_| ())
    }

    pub fn to_config(&self) -> ScenarioConfig {
        ScenarioConfig {
            graph: self.graph.to_rows(),
            agents: self
                .agents
                .iter()
                .map(|a| AgentConfig { p: a.p, sigma: a.sigma(), q: a.q, prior_mean: a.prior_mean, prior_var: a.prior_var })
                .collect(),
            init: match &self.init {
                InitialCondition::Sample => InitConfig::Sample,
                InitialCondition::Fixed(x0) => InitConfig::Fixed { x0: x0.clone() },
            },
            horizon: self.horizon,
            seed: self.seed,
            reference: self.reference.clone(),
        }
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.graph.alpha()
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }
}

pub fn parse_config(text: &str) -> Result<Scenario, ConfigError> {
    let cfg: ScenarioConfig = serde_json::from_str(text)?;
    Ok(Scenario::from_config(&cfg)?)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Scenario, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config(&text)
}

/// Canonical JSON for a scenario (stable field order, no whitespace).
pub fn to_canonical_json(scenario: &Scenario) -> String {
    serde_json::to_string(&scenario.to_config()).expect("scenario config always serializes")
}
