//! Triggering policies: flow/jump set membership and scalar event functions.
//!
//! Event functions are negative strictly inside the flow set and nonnegative on
//! the jump set, so the simulator can bracket crossings by sign.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::hybrid::HybridState;
use crate::linalg::quad_form;
use crate::{Error, Result};

/// Power law `c s^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaForm {
    pub coeff: f64,
    pub exponent: f64,
}

impl GammaForm {
    pub fn new(coeff: f64, exponent: f64) -> Result<Self> {
        let g = Self { coeff, exponent };
        g.validate()?;
        Ok(g)
    }

    pub fn quadratic(coeff: f64) -> Self {
        Self { coeff, exponent: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coeff >= 0.0 && self.coeff.is_finite()) {
            return Err(Error::Config(format!("gamma coefficient must be >= 0, got {}", self.coeff)));
        }
        if !(self.exponent >= 1.0 && self.exponent.is_finite()) {
            return Err(Error::Config(format!("gamma exponent must be >= 1, got {}", self.exponent)));
        }
        Ok(())
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.coeff * s.powf(self.exponent)
    }

    /// Derivative in `s`.
    pub fn derivative(&self, s: f64) -> f64 {
        self.coeff * self.exponent * s.powf(self.exponent - 1.0)
    }

    pub fn inverse(&self, v: f64) -> f64 {
        (v / self.coeff).powf(1.0 / self.exponent)
    }

    /// Slope `c` such that `other o self^-1 (s) = c s`, when that composition is linear.
    pub fn linear_link(&self, other: &GammaForm) -> Option<f64> {
        (self.exponent == other.exponent && self.coeff > 0.0).then(|| other.coeff / self.coeff)
    }
}

/// Data a state-dependent threshold needs: `V_x(x) = x' P1 x`, `alpha1` and `gamma1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdData {
    pub p1: DMatrix<f64>,
    pub alpha1: f64,
    pub gamma1: GammaForm,
}

impl ThresholdData {
    pub fn vx(&self, x: &DVector<f64>) -> f64 {
        quad_form(&self.p1, x)
    }

    /// `gamma1(|e|) - sigma alpha1 V_x(x)`
    pub fn base_margin(&self, sigma: f64, x: &DVector<f64>, e: &DVector<f64>) -> f64 {
        self.gamma1.eval(e.norm()) - sigma * self.alpha1 * self.vx(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum TriggerPolicy {
    Naive {
        sigma: f64,
    },
    #[serde(rename = "deadzone")]
    DeadZone {
        sigma: f64,
        rho: f64,
    },
    TimeRegularized {
        sigma: f64,
        t_star: f64,
    },
    Periodic {
        period: f64,
    },
}

impl TriggerPolicy {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        if let Some(s) = self.sigma() {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::Config(format!("sigma must lie in (0, 1), got {s}")));
            }
        }
        match *self {
            TriggerPolicy::Naive { .. } => Ok(()),
            TriggerPolicy::DeadZone { rho, .. } => pos("rho", rho),
            TriggerPolicy::TimeRegularized { t_star, .. } => pos("t_star", t_star),
            TriggerPolicy::Periodic { period } => pos("period", period),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TriggerPolicy::Naive { .. } => "naive",
            TriggerPolicy::DeadZone { .. } => "deadzone",
            TriggerPolicy::TimeRegularized { .. } => "time_regularized",
            TriggerPolicy::Periodic { .. } => "periodic",
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match *self {
            TriggerPolicy::Naive { sigma }
            | TriggerPolicy::DeadZone { sigma, .. }
            | TriggerPolicy::TimeRegularized { sigma, .. } => Some(sigma),
            TriggerPolicy::Periodic { .. } => None,
        }
    }

    /// Whether the hybrid state carries the clock `tau` (time since the last jump).
    pub fn uses_clock(&self) -> bool {
        matches!(
            self,
            TriggerPolicy::TimeRegularized { .. } | TriggerPolicy::Periodic { .. }
        )
    }

    /// Clock value at which the policy must be inspected exactly.
    pub fn clock_landing(&self) -> Option<f64> {
        match *self {
            TriggerPolicy::TimeRegularized { t_star, .. } => Some(t_star),
            TriggerPolicy::Periodic { period } => Some(period),
            _ => None,
        }
    }

    /// Checks the clock component against the policy.
    pub fn check_state(&self, q: &HybridState) -> Result<()> {
        match (self.uses_clock(), q.tau) {
            (true, None) => Err(Error::Config(format!("policy {} requires the clock tau", self.name()))),
            (false, Some(_)) => Err(Error::Config(format!("policy {} forbids the clock tau", self.name()))),
            (true, Some(t)) if !(t >= 0.0) => Err(Error::Config(format!("clock must be nonnegative, got {t}"))),
            _ => Ok(()),
        }
    }

    /// Signed event function; `>= 0` means the state is in the jump set.
    pub fn event_function(&self, q: &HybridState, th: Option<&ThresholdData>) -> Result<f64> {
        let need = || th.ok_or_else(|| Error::Config("state-dependent trigger needs a certificate".into()));
        match *self {
            TriggerPolicy::Naive { sigma } => Ok(naive_event(q, need()?, sigma)),
            TriggerPolicy::DeadZone { sigma, rho } => Ok(deadzone_event(q, need()?, sigma, rho)),
            TriggerPolicy::TimeRegularized { sigma, t_star } => {
                let tau = q.tau.ok_or_else(|| Error::Config("missing clock".into()))?;
                Ok(time_regularized_margin(q, need()?, sigma, t_star, tau))
            }
            TriggerPolicy::Periodic { period } => {
                let tau = q.tau.ok_or_else(|| Error::Config("missing clock".into()))?;
                Ok(periodic_event(tau, period))
            }
        }
    }
}

/// `gamma1(|e|) - sigma alpha1 V_x(x)`
pub fn naive_event(q: &HybridState, th: &ThresholdData, sigma: f64) -> f64 {
    th.base_margin(sigma, &q.x, &q.e)
}

/// `gamma1(|e|) - max(sigma alpha1 V_x(x), rho)`
pub fn deadzone_event(q: &HybridState, th: &ThresholdData, sigma: f64, rho: f64) -> f64 {
    th.gamma1.eval(q.e.norm()) - (sigma * th.alpha1 * th.vx(&q.x)).max(rho)
}

/// Threshold margin once the dwell time has elapsed, `-inf` before.
pub fn time_regularized_margin(q: &HybridState, th: &ThresholdData, sigma: f64, t_star: f64, tau: f64) -> f64 {
    if tau >= t_star {
        th.base_margin(sigma, &q.x, &q.e)
    } else {
        f64::NEG_INFINITY
    }
}

/// Set membership for the time-regularized rule. Equalities hold within `tol`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClockDecision {
    pub flow_ok: bool,
    pub jump_ok: bool,
}

pub fn time_regularized_event(
    q: &HybridState,
    th: &ThresholdData,
    sigma: f64,
    t_star: f64,
    tol: f64,
) -> Result<ClockDecision> {
    let tau = q
        .tau
        .ok_or_else(|| Error::Config("time-regularized trigger needs the clock tau".into()))?;
    let m = th.base_margin(sigma, &q.x, &q.e);
    let at_dwell = (tau - t_star).abs() <= tol;
    Ok(ClockDecision {
        flow_ok: m <= 0.0 || tau <= t_star,
        jump_ok: (m.abs() <= tol && tau >= t_star - tol) || (m >= -tol && at_dwell),
    })
}

/// `tau - period`
pub fn periodic_event(tau: f64, period: f64) -> f64 {
    tau - period
}
