//! Closed-form `(epsilon, delta)` calibration.
//!
//! For robot `i` with self-weight `alpha`, decay `q`, prior variance `r` and
//! noise variance `sigma^2`, let `rho = alpha^2 / q^2` and
//! `snr = r / sigma^2`. The leakage floor after a first transmission at
//! step `k` is `log(1 + snr rho^k / (1 - rho))`, and
//!
//! ```text
//! b_k = F_chi2_2(2 eps - 2 log(1 + snr rho^k / (1 - rho)))
//! delta >= 1 - sum_k (1 - p)^k p b_k
//! ```
//!
//! is a sufficient condition for `(eps, delta)` privacy. The corollary form
//! trades the series for the two terms `b_0`, `b_1`.

use thiserror::Error;

use crate::dynamics::AgentParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("alpha < q < 1 is required, got alpha = {alpha}, q = {q}")]
    AlphaNotBelowQ { alpha: f64, q: f64 },
    #[error("invalid calibration input: {0}")]
    Domain(&'static str),
    #[error("unbounded quantile at u = 1")]
    UnboundedQuantile,
    #[error("quantile argument {0} outside [0, 1)")]
    QuantileDomain(f64),
    #[error("epsilon below leakage floor: {epsilon} < {floor}")]
    EpsilonBelowFloor { epsilon: f64, floor: f64 },
    #[error("truncation tolerance must be in (0, 1), got {0}")]
    Tolerance(f64),
}

/// CDF of the chi-square distribution with two degrees of freedom.
pub fn chi2_2_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-x / 2.0).exp_m1()
    }
}

/// Inverse of [`chi2_2_cdf`] on `[0, 1)`.
pub fn chi2_2_quantile(u: f64) -> Result<f64, CalibrationError> {
    if u == 1.0 {
        return Err(CalibrationError::UnboundedQuantile);
    }
    if !(0.0..1.0).contains(&u) {
        return Err(CalibrationError::QuantileDomain(u));
    }
    Ok(-2.0 * (-u).ln_1p())
}

/// A `(epsilon, delta)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self, CalibrationError> {
        if !(epsilon >= 0.0) {
            return Err(CalibrationError::Domain("epsilon must be >= 0"));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(CalibrationError::Domain("delta must be in [0, 1]"));
        }
        Ok(Self { epsilon, delta })
    }
}

/// Per-robot mechanism parameters as seen by the calibration formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationInputs {
    pub alpha: f64,
    pub p: f64,
    pub sigma2: f64,
    pub q: f64,
    pub r: f64,
    rho: f64,
}

impl CalibrationInputs {
    pub fn new(alpha: f64, p: f64, sigma2: f64, q: f64, r: f64) -> Result<Self, CalibrationError> {
        if !(alpha > 0.0 && alpha < q && q < 1.0) {
            return Err(CalibrationError::AlphaNotBelowQ { alpha, q });
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(CalibrationError::Domain("p must be in (0, 1]"));
        }
        if !(sigma2 > 0.0 && r > 0.0) {
            return Err(CalibrationError::Domain("sigma2 and r must be > 0"));
        }
        Ok(Self { alpha, p, sigma2, q, r, rho: (alpha * alpha) / (q * q) })
    }

    pub fn from_agent(agent: &AgentParams, alpha: f64) -> Result<Self, CalibrationError> {
        Self::new(alpha, agent.p, agent.sigma2, agent.q, agent.prior_var)
    }

    /// Same mechanism with a different transmission probability.
    pub fn with_p(&self, p: f64) -> Result<Self, CalibrationError> {
        Self::new(self.alpha, p, self.sigma2, self.q, self.r)
    }

    /// `alpha^2 / q^2`, in `(0, 1)`.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `r / sigma^2`.
    pub fn snr_scale(&self) -> f64 {
        self.r / self.sigma2
    }

    /// `log(1 + snr rho^k / (1 - rho))`: the largest log-determinant term
    /// possible once the first transmission happens at step `k`.
    pub fn leakage_floor(&self, k: u64) -> f64 {
        (self.snr_scale() * self.rho.powf(k as f64) / (1.0 - self.rho)).ln_1p()
    }
}

pub fn b_k(k: u64, eps: f64, inputs: &CalibrationInputs) -> f64 {
    chi2_2_cdf(2.0 * eps - 2.0 * inputs.leakage_floor(k))
}

/// Result of [`theorem1_delta`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesDelta {
    /// Conservative `1 - S_K`.
    pub delta_min: f64,
    /// The exact series value lies in `[lower, upper]`.
    pub lower: f64,
    pub upper: f64,
    /// Last term index summed.
    pub terms: u64,
}

pub const DEFAULT_TOLERANCE: f64 = 1e-12;

/// Smallest sufficient `delta` from the first-transmission series.
///
/// The series is cut at the first `K` with `(1 - p)^(K+1) < tol`; since every
/// `b_k <= 1` the dropped tail weighs at most `(1 - p)^(K+1)`.
pub fn theorem1_delta(eps: f64, inputs: &CalibrationInputs, tol: f64) -> Result<SeriesDelta, CalibrationError> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(CalibrationError::Tolerance(tol));
    }
    let p = inputs.p;
    let miss = 1.0 - p;
    let mut sum = 0.0;
    // (1 - p)^k, with 0^0 = 1
    let mut weight = 1.0;
    let mut k = 0u64;
    loop {
        sum += weight * p * b_k(k, eps, inputs);
        weight *= miss;
        if weight < tol {
            break;
        }
        k += 1;
    }
    let upper = (1.0 - sum).clamp(0.0, 1.0);
    let lower = (1.0 - sum - weight).clamp(0.0, 1.0);
    Ok(SeriesDelta { delta_min: upper, lower, upper, terms: k })
}

/// Outcome of the two-term corollary check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorollaryCheck {
    /// Whether `eps >= floor + F^{-1}(1 - delta_tilde) / 2` holds for the target.
    pub satisfied: bool,
    /// `delta_tilde = delta + (1 - p)(b_1 - b_0)` for the target `delta`.
    pub delta_tilde: f64,
    /// `delta_tilde* = exp(-(eps - floor))`, the corollary at equality.
    pub delta_tilde_star: f64,
    /// `delta_tilde* - (1 - p)(b_1 - b_0)`: the smallest `delta` the corollary certifies.
    pub implied_delta: f64,
    pub b0: f64,
    pub b1: f64,
}

pub fn calibrate_corollary(eps: f64, target_delta: f64, inputs: &CalibrationInputs) -> Result<CorollaryCheck, CalibrationError> {
    let floor = inputs.leakage_floor(0);
    if eps < floor {
        return Err(CalibrationError::EpsilonBelowFloor { epsilon: eps, floor });
    }
    let b0 = b_k(0, eps, inputs);
    let b1 = b_k(1, eps, inputs);
    let amplification = (1.0 - inputs.p) * (b1 - b0);
    let delta_tilde = target_delta + amplification;
    let satisfied = if delta_tilde >= 1.0 {
        true
    } else if delta_tilde <= 0.0 {
        false
    } else {
        // F^{-1}(1 - dt) = -2 ln(dt)
        eps >= floor - delta_tilde.ln()
    };
    let delta_tilde_star = (-(eps - floor)).exp();
    Ok(CorollaryCheck {
        satisfied,
        delta_tilde,
        delta_tilde_star,
        implied_delta: delta_tilde_star - amplification,
        b0,
        b1,
    })
}

/// `Phi(1) - Phi(p)`: how much `delta` drops by transmitting with
/// probability `p` instead of always.
pub fn amplification_gap(eps: f64, inputs: &CalibrationInputs, p: f64) -> Result<f64, CalibrationError> {
    let full = theorem1_delta(eps, &inputs.with_p(1.0)?, DEFAULT_TOLERANCE)?.delta_min;
    let partial = theorem1_delta(eps, &inputs.with_p(p)?, DEFAULT_TOLERANCE)?.delta_min;
    Ok(full - partial)
}

/// Per-robot calibration summary, as emitted by the `calibrate` command.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RobotCalibration {
    pub robot: usize,
    pub alpha: f64,
    pub rho: f64,
    pub b_0: f64,
    pub b_1: f64,
    pub delta_tilde: Option<f64>,
    pub delta_theorem1: f64,
    pub delta_corollary: Option<f64>,
    pub satisfied: bool,
}

/// Calibrates one robot at `eps`. With a `target_delta` the corollary is
/// checked against it; without one, `satisfied` reports whether `eps`
/// clears the leakage floor at all.
pub fn calibrate_robot(
    robot: usize,
    eps: f64,
    target_delta: Option<f64>,
    inputs: &CalibrationInputs,
) -> Result<RobotCalibration, CalibrationError> {
    let series = theorem1_delta(eps, inputs, DEFAULT_TOLERANCE)?;
    let (delta_tilde, delta_corollary, satisfied) =
        match calibrate_corollary(eps, target_delta.unwrap_or(0.0), inputs) {
            Ok(c) => match target_delta {
                Some(_) => (Some(c.delta_tilde), Some(c.implied_delta), c.satisfied),
                None => (Some(c.delta_tilde_star), Some(c.implied_delta), true),
            },
            Err(CalibrationError::EpsilonBelowFloor { .. }) => (None, None, false),
            Err(e) => return Err(e),
        };
    Ok(RobotCalibration {
        robot,
        alpha: inputs.alpha,
        rho: inputs.rho(),
        b_0: b_k(0, eps, inputs),
        b_1: b_k(1, eps, inputs),
        delta_tilde,
        delta_theorem1: series.delta_min,
        delta_corollary,
        satisfied,
    })
}
