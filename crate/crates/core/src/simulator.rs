//! Hybrid integration of the closed loop.
//!
//! Flows are integrated with adaptive Dormand–Prince steps (or, for linear plants,
//! an exact matrix-exponential propagator). Crossings of the trigger surface are
//! bracketed by sign and refined by bisection on the dense output. Jumps are eager:
//! whenever the event function is nonnegative the jump map is applied before any
//! further flow.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certificate::{AnalysisParameters, Certificate};
use crate::hybrid::{HybridArc, HybridState, JumpReason, MonitorValues, Termination};
use crate::ode::{DenseStep, Dopri5};
use crate::plant::PlantSpec;
use crate::trigger::{ThresholdData, TriggerPolicy};
use crate::{Error, Result};

pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Propagator {
    /// Adaptive Dormand–Prince 5(4).
    Rk45,
    /// `exp(A h)` on a fixed grid; linear plants only.
    LinearExact { step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Step cap as a multiple of epsilon.
    pub max_step_factor: f64,
    /// Absolute step cap applied on top of the epsilon-scaled one.
    pub max_step: Option<f64>,
    pub event_tol: f64,
    pub horizon: f64,
    pub zeno_max_jumps: usize,
    pub zeno_window: f64,
    pub seed: u64,
    pub propagator: Propagator,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step_factor: 0.5,
            max_step: None,
            event_tol: 1e-9,
            horizon: 10.0,
            zeno_max_jumps: 1000,
            zeno_window: 1e-6,
            seed: 0,
            propagator: Propagator::Rk45,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos("rel_tol", self.rel_tol)?;
        pos("abs_tol", self.abs_tol)?;
        pos("event_tol", self.event_tol)?;
        pos("max_step_factor", self.max_step_factor)?;
        pos("zeno_window", self.zeno_window)?;
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be finite and >= 0, got {}", self.horizon)));
        }
        if let Some(h) = self.max_step {
            pos("max_step", h)?;
        }
        if let Propagator::LinearExact { step } = self.propagator {
            pos("propagator step", step)?;
        }
        if self.zeno_max_jumps < 2 {
            return Err(Error::Config("zeno_max_jumps must be at least 2".into()));
        }
        Ok(())
    }

    fn step_cap(&self, epsilon: f64) -> f64 {
        let cap = self.max_step_factor * epsilon;
        self.max_step.map_or(cap, |m| m.min(cap))
    }
}

/// Optional Lyapunov monitors recorded with every sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct Monitors<'a> {
    pub cert: Option<&'a Certificate>,
    pub params: Option<&'a AnalysisParameters>,
}

impl<'a> Monitors<'a> {
    pub fn new(cert: Option<&'a Certificate>, params: Option<&'a AnalysisParameters>) -> Self {
        Self { cert, params }
    }
}

/// `V = V_x + sqrt(eps) V_y`
pub fn monitor_v(q: &HybridState, cert: &Certificate, epsilon: f64) -> f64 {
    cert.monitor_v(q, epsilon)
}

/// `R = V_x + d V_y + max(0, gamma1_bar zeta(tau) |e|^2)`, with `zeta` frozen beyond its range.
pub fn monitor_r(q: &HybridState, cert: &Certificate, d: f64, zeta_at_tau: f64) -> f64 {
    cert.monitor_r(q, d, zeta_at_tau)
}

/// Bisection for the first sign change of `margin` from negative to nonnegative on
/// `[t_lo, t_hi]`. Returns the right end of the final bracket, or `None` when the
/// margin is still negative at `t_hi`.
pub fn locate_event<F: Fn(f64) -> f64>(margin: F, t_lo: f64, t_hi: f64, tol: f64) -> Option<f64> {
    if margin(t_hi) < 0.0 {
        return None;
    }
    let (mut lo, mut hi) = (t_lo, t_hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if margin(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

enum Dense<'a> {
    Rk(DenseStep),
    Exact { a: &'a DMatrix<f64>, t0: f64, w0: DVector<f64> },
}

impl Dense<'_> {
    fn eval(&self, t: f64) -> DVector<f64> {
        match self {
            Dense::Rk(s) => s.eval(t),
            Dense::Exact { a, t0, w0 } => (*a * (t - t0)).exp() * w0,
        }
    }
}

struct Context<'a> {
    policy: TriggerPolicy,
    threshold: Option<ThresholdData>,
    monitors: Monitors<'a>,
    epsilon: f64,
}

impl Context<'_> {
    fn margin(&self, q: &HybridState) -> f64 {
        self.policy
            .event_function(q, self.threshold.as_ref())
            .expect("policy prerequisites checked before integration")
    }

    fn monitor(&self, q: &HybridState) -> MonitorValues {
        let v = self.monitors.cert.map(|c| monitor_v(q, c, self.epsilon));
        let r = match (self.monitors.cert, self.monitors.params) {
            (Some(c), Some(p)) => match (p.d, p.zeta.as_ref(), q.tau) {
                (Some(d), Some(z), Some(tau)) => Some(monitor_r(q, c, d, z.eval(tau))),
                _ => None,
            },
            _ => None,
        };
        MonitorValues {
            v,
            r,
            trigger_margin: self.margin(q),
        }
    }

    fn jump_reason(&self, q: &HybridState, tol: f64) -> JumpReason {
        match self.policy {
            TriggerPolicy::Periodic { .. } => JumpReason::Periodic,
            TriggerPolicy::TimeRegularized { t_star, .. }
                if q.tau.is_some_and(|t| (t - t_star).abs() <= tol) =>
            {
                JumpReason::ClockExpired
            }
            _ => JumpReason::Threshold,
        }
    }
}

/// Integrates one hybrid arc from `q0` until the horizon, the Zeno guard or divergence.
pub fn integrate_arc(
    spec: &PlantSpec,
    policy: &TriggerPolicy,
    q0: &HybridState,
    cfg: &SolverConfig,
    monitors: Monitors<'_>,
) -> Result<HybridArc> {
    cfg.validate()?;
    policy.validate()?;
    q0.check_dims(spec.dims())?;
    q0.check_finite()?;
    policy.check_state(q0)?;
    if let Some(c) = monitors.cert {
        c.check_plant(spec)?;
    }
    let threshold = monitors.cert.map(Certificate::threshold_data);
    if threshold.is_none() && !matches!(policy, TriggerPolicy::Periodic { .. }) {
        return Err(Error::Config(format!(
            "policy {} needs a Lyapunov certificate for its threshold",
            policy.name()
        )));
    }
    let ctx = Context {
        policy: *policy,
        threshold,
        monitors,
        epsilon: spec.epsilon,
    };

    let dims = spec.dims();
    let exact = match cfg.propagator {
        Propagator::LinearExact { step } => {
            let lin = spec
                .linear()
                .ok_or_else(|| Error::Config("exact propagation needs a linear plant".into()))?;
            let a = lin.closed_loop_matrix()?;
            let phi = (&a * step).exp();
            Some((a, phi, step))
        }
        Propagator::Rk45 => None,
    };
    let solver = Dopri5::new(cfg.rel_tol, cfg.abs_tol);
    let rhs = |_t: f64, w: &DVector<f64>| {
        let q = HybridState::from_flat(w, dims, None);
        spec.closed_loop_flow_q(&q)
            .unwrap_or_else(|_| DVector::from_element(w.len(), f64::NAN))
    };
    let h_cap = cfg.step_cap(spec.epsilon);
    let landing = policy.clock_landing();

    let mut arc = HybridArc::new(dims);
    let mut q = q0.clone();
    let mut t = 0.0_f64;
    arc.append_flow_sample(t, q.clone(), ctx.monitor(&q))?;
    let mut recent: VecDeque<f64> = VecDeque::new();
    let mut h_rk = f64::NAN;
    let mut k1: Option<DVector<f64>> = None;

    loop {
        if ctx.margin(&q) >= 0.0 {
            let post = spec.jump_map(&q);
            let reason = ctx.jump_reason(&q, cfg.event_tol);
            let mon = ctx.monitor(&post);
            arc.append_jump(&q, post.clone(), mon, reason)?;
            q = post;
            k1 = None;
            recent.push_back(t);
            while recent.front().is_some_and(|&t0| t - t0 > cfg.zeno_window) {
                recent.pop_front();
            }
            if recent.len() >= cfg.zeno_max_jumps {
                arc.termination = Some(Termination::ZenoGuard);
                return Ok(arc);
            }
            continue;
        }
        if t >= cfg.horizon {
            arc.termination = Some(Termination::HorizonReached);
            return Ok(arc);
        }

        // longest admissible step: horizon and the next clock landing
        let mut h_max = cfg.horizon - t;
        let mut lands = false;
        if let (Some(l), Some(tau)) = (landing, q.tau) {
            if tau < l && l - tau <= h_max {
                h_max = l - tau;
                lands = true;
            }
        }
        let w0 = q.flat();
        let (h, w1, dense) = match &exact {
            Some((a, phi, step)) => {
                let h = step.min(h_max);
                let w1 = if h == *step { phi * &w0 } else { (a * h).exp() * &w0 };
                (h, w1, Dense::Exact { a, t0: t, w0: w0.clone() })
            }
            None => {
                let f0 = match k1.take() {
                    Some(k) => k,
                    None => rhs(t, &w0),
                };
                if !f0.iter().all(|v| v.is_finite()) {
                    arc.termination = Some(Termination::Divergence);
                    return Ok(arc);
                }
                if !h_rk.is_finite() {
                    h_rk = solver.initial_step(&w0, &f0, h_cap);
                }
                let mut rejects = 0;
                loop {
                    let h = h_rk.min(h_cap).min(h_max);
                    let att = solver.attempt(&rhs, t, &w0, &f0, h);
                    if att.err.is_finite() && att.err <= 1.0 {
                        h_rk = h * Dopri5::rescale(att.err);
                        k1 = Some(att.k7);
                        break (h, att.y1, Dense::Rk(att.dense));
                    }
                    rejects += 1;
                    h_rk = h * Dopri5::rescale(att.err.min(1e10)).min(0.9);
                    if rejects > 200 || h_rk < 1e-15 * (1.0 + t) {
                        if att.err.is_finite() {
                            return Err(Error::Integration(format!("step size underflow at t = {t}")));
                        }
                        arc.termination = Some(Termination::Divergence);
                        return Ok(arc);
                    }
                }
            }
        };

        let lands = lands && h >= h_max;
        let tau0 = q.tau;
        let state_at = |s: f64, w: DVector<f64>| -> HybridState {
            let tau = tau0.map(|tau| if lands && s == t + h { landing.unwrap() } else { tau + (s - t) });
            HybridState::from_flat(&w, dims, tau)
        };
        let mut t1 = t + h;
        let mut q1 = state_at(t1, w1);
        // a landing step ends where the clock-gated margin first becomes available
        if !lands && ctx.margin(&q1) >= 0.0 {
            if let Some(te) = locate_event(|s| ctx.margin(&state_at(s, dense.eval(s))), t, t1, cfg.event_tol) {
                if te < t1 {
                    t1 = te;
                    q1 = state_at(te, dense.eval(te));
                    k1 = None;
                }
            }
        }
        if q1.check_finite().is_err() || q1.xye_norm() > DIVERGENCE_NORM {
            if q1.check_finite().is_ok() {
                arc.append_flow_sample(t1, q1.clone(), ctx.monitor(&q1))?;
            }
            arc.termination = Some(Termination::Divergence);
            return Ok(arc);
        }
        t = t1;
        q = q1;
        arc.append_flow_sample(t, q.clone(), ctx.monitor(&q))?;
    }
}
