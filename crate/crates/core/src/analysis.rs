//! Post-processing of arcs: inter-event times, practical balls, decay envelopes,
//! transmission counts and parameter sweeps.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hybrid::{HybridArc, HybridState, Termination};
use crate::scenario::Scenario;
use crate::simulator::{integrate_arc, Monitors, SolverConfig};
use crate::plant::PlantSpec;
use crate::trigger::TriggerPolicy;
use crate::{Error, Result};

pub const TRAILING_FRACTION: f64 = 0.2;

/// Durations between consecutive jumps.
pub fn inter_event_times(arc: &HybridArc) -> Vec<f64> {
    arc.events.windows(2).map(|w| w[1].t - w[0].t).collect()
}

/// Inter-event times, checked against a dwell time `t_star`.
pub fn dwell_checked_inter_event_times(arc: &HybridArc, t_star: f64, event_tol: f64) -> Result<Vec<f64>> {
    let iet = inter_event_times(arc);
    if let Some(&bad) = iet.iter().find(|&&d| d < t_star - 2.0 * event_tol) {
        return Err(Error::Domain(format!(
            "inter-event time {bad} is below the dwell time {t_star}"
        )));
    }
    Ok(iet)
}

/// Sup of `|(x, y, e)|` over samples in the trailing fraction of continuous time.
pub fn practical_ball(arc: &HybridArc, trailing_fraction: f64) -> Result<f64> {
    if arc.termination != Some(Termination::HorizonReached) {
        return Err(Error::InsufficientData("arc did not reach its horizon".into()));
    }
    if !(trailing_fraction > 0.0 && trailing_fraction <= 1.0) {
        return Err(Error::Config(format!("trailing fraction must lie in (0, 1], got {trailing_fraction}")));
    }
    let t_end = arc.end_time();
    if arc.len() < 2 || t_end <= 0.0 {
        return Err(Error::InsufficientData("arc is too short".into()));
    }
    let start = (1.0 - trailing_fraction) * t_end;
    arc.samples
        .iter()
        .filter(|s| s.time.t >= start)
        .map(|s| s.state.xye_norm())
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .ok_or_else(|| Error::InsufficientData("no samples in the trailing window".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeMode {
    Practical,
    Gas,
}

/// `|(x, y)| <= beta_hat exp(-psi_hat (t + j)) + kappa_hat`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub beta_hat: f64,
    pub psi_hat: f64,
    pub kappa_hat: f64,
    /// Fraction of samples above the fitted envelope.
    pub violation_fraction: f64,
    pub n_fit: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EnvelopeFit {
    Fitted(Envelope),
    /// Every sample is already inside the offset ball.
    Degenerate { kappa_hat: f64 },
}

/// Least-squares line through `(s, ln v)`; returns `(intercept, slope)`.
fn log_linear_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    let (ms, ml) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(s, l)| (a + s / n, b + l / n));
    let (sxx, sxy) = points.iter().fold((0.0, 0.0), |(a, b), &(s, l)| {
        (a + (s - ms) * (s - ms), b + (s - ms) * (l - ml))
    });
    (sxx > 0.0).then(|| {
        let slope = sxy / sxx;
        (ml - slope * ms, slope)
    })
}

/// Fits an exponential envelope to `|(x, y)|` against the hybrid abscissa `t + j`.
pub fn fit_envelope(arc: &HybridArc, mode: EnvelopeMode) -> Result<EnvelopeFit> {
    if arc.len() < 10 {
        return Err(Error::InsufficientData(format!("{} samples, need at least 10", arc.len())));
    }
    let kappa_hat = match mode {
        EnvelopeMode::Gas => 0.0,
        EnvelopeMode::Practical => practical_ball(arc, TRAILING_FRACTION)?,
    };
    let pts: Vec<(f64, f64)> = arc
        .samples
        .iter()
        .filter_map(|s| {
            let excess = s.state.xy_norm() - kappa_hat;
            (excess >= f64::MIN_POSITIVE).then(|| (s.time.hybrid_abscissa(), excess.ln()))
        })
        .collect();
    if pts.is_empty() {
        return Ok(EnvelopeFit::Degenerate { kappa_hat });
    }
    let (intercept, slope) = log_linear_fit(&pts).ok_or_else(|| {
        Error::InsufficientData("samples above the offset share one abscissa".into())
    })?;
    let beta_hat = intercept.exp();
    let psi_hat = -slope;
    let violations = arc
        .samples
        .iter()
        .filter(|s| {
            let bound = beta_hat * (-psi_hat * s.time.hybrid_abscissa()).exp() + kappa_hat;
            s.state.xy_norm() > bound * (1.0 + 1e-12)
        })
        .count();
    Ok(EnvelopeFit::Fitted(Envelope {
        beta_hat,
        psi_hat,
        kappa_hat,
        violation_fraction: violations as f64 / arc.len() as f64,
        n_fit: pts.len(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcSummary {
    pub jump_count: usize,
    pub min_iet: Option<f64>,
    pub mean_iet: Option<f64>,
    pub final_xy_norm: f64,
    pub ball_radius_estimate: Option<f64>,
    pub envelope: Option<EnvelopeFit>,
    pub final_time: f64,
    pub termination: Termination,
}

pub fn summarize(arc: &HybridArc) -> ArcSummary {
    let iet = inter_event_times(arc);
    let min_iet = iet.iter().copied().reduce(f64::min);
    let mean_iet = (!iet.is_empty()).then(|| iet.iter().sum::<f64>() / iet.len() as f64);
    ArcSummary {
        jump_count: arc.jump_count(),
        min_iet,
        mean_iet,
        final_xy_norm: arc.last().map_or(0.0, |s| s.state.xy_norm()),
        ball_radius_estimate: practical_ball(arc, TRAILING_FRACTION).ok(),
        envelope: fit_envelope(arc, EnvelopeMode::Practical).ok(),
        final_time: arc.end_time(),
        termination: arc.termination.unwrap_or(Termination::HorizonReached),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionComparison {
    pub policy_a: &'static str,
    pub policy_b: &'static str,
    pub jumps_a: usize,
    pub jumps_b: usize,
    pub initial_xy_norm: f64,
    pub final_xy_norm_a: f64,
    pub final_xy_norm_b: f64,
}

fn with_clock(q: &HybridState, policy: &TriggerPolicy) -> HybridState {
    let mut q = q.clone();
    q.tau = policy.uses_clock().then(|| q.tau.unwrap_or(0.0));
    q
}

/// Runs two policies from the same initial state and compares their transmission counts.
pub fn transmission_comparison(
    spec: &PlantSpec,
    q0: &HybridState,
    horizon: f64,
    policy_a: &TriggerPolicy,
    policy_b: &TriggerPolicy,
    cfg: &SolverConfig,
    monitors: Monitors<'_>,
) -> Result<TransmissionComparison> {
    let cfg = SolverConfig { horizon, ..*cfg };
    let run = |p: &TriggerPolicy| integrate_arc(spec, p, &with_clock(q0, p), &cfg, monitors);
    let a = run(policy_a)?;
    let b = run(policy_b)?;
    let fin = |arc: &HybridArc| arc.last().map_or(0.0, |s| s.state.xy_norm());
    Ok(TransmissionComparison {
        policy_a: policy_a.name(),
        policy_b: policy_b.name(),
        jumps_a: a.jump_count(),
        jumps_b: b.jump_count(),
        initial_xy_norm: q0.xy_norm(),
        final_xy_norm_a: fin(&a),
        final_xy_norm_b: fin(&b),
    })
}

/// Axes of a sweep. An empty axis keeps the scenario's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub epsilon: Vec<f64>,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    pub t_star: Vec<f64>,
    pub seed: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub epsilon: f64,
    pub rho: Option<f64>,
    pub sigma: Option<f64>,
    pub t_star: Option<f64>,
    pub seed: u64,
    pub summary: Option<ArcSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

fn axis<T: Copy>(values: &[T], default: T) -> Vec<T> {
    if values.is_empty() {
        vec![default]
    } else {
        values.to_vec()
    }
}

fn with_params(policy: TriggerPolicy, rho: Option<f64>, sigma: Option<f64>, t_star: Option<f64>) -> TriggerPolicy {
    match policy {
        TriggerPolicy::Naive { sigma: s } => TriggerPolicy::Naive { sigma: sigma.unwrap_or(s) },
        TriggerPolicy::DeadZone { sigma: s, rho: r } => TriggerPolicy::DeadZone {
            sigma: sigma.unwrap_or(s),
            rho: rho.unwrap_or(r),
        },
        TriggerPolicy::TimeRegularized { sigma: s, t_star: t } => TriggerPolicy::TimeRegularized {
            sigma: sigma.unwrap_or(s),
            t_star: t_star.unwrap_or(t),
        },
        TriggerPolicy::Periodic { period } => TriggerPolicy::Periodic { period },
    }
}

/// One arc per grid cell, cells in row-major order of `(epsilon, rho, sigma, t_star, seed)`.
/// Cell failures are recorded, not propagated.
pub fn sweep(scenario: &Scenario, grid: &SweepGrid) -> Result<SweepResult> {
    let p = scenario.policy;
    let (rho0, t0) = match p {
        TriggerPolicy::DeadZone { rho, .. } => (Some(rho), None),
        TriggerPolicy::TimeRegularized { t_star, .. } => (None, Some(t_star)),
        _ => (None, None),
    };
    let mut tuples = Vec::new();
    for &eps in &axis(&grid.epsilon, scenario.plant.epsilon) {
        for &rho in &axis(&grid.rho.iter().map(|&v| Some(v)).collect::<Vec<_>>(), rho0) {
            for &sigma in &axis(&grid.sigma.iter().map(|&v| Some(v)).collect::<Vec<_>>(), p.sigma()) {
                for &ts in &axis(&grid.t_star.iter().map(|&v| Some(v)).collect::<Vec<_>>(), t0) {
                    for &seed in &axis(&grid.seed, scenario.solver.seed) {
                        tuples.push((eps, rho, sigma, ts, seed));
                    }
                }
            }
        }
    }
    let cells = tuples
        .into_par_iter()
        .map(|(epsilon, rho, sigma, t_star, seed)| {
            let mut sc = scenario.clone();
            sc.plant.epsilon = epsilon;
            sc.policy = with_params(p, rho, sigma, t_star);
            sc.solver.seed = seed;
            let (summary, error) = match sc.run() {
                Ok(out) => (Some(out.summary), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SweepCell {
                epsilon,
                rho,
                sigma,
                t_star,
                seed,
                summary,
                error,
            }
        })
        .collect();
    Ok(SweepResult { cells })
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from(
            "epsilon,rho,sigma,t_star,seed,jump_count,min_iet,mean_iet,final_xy_norm,ball_radius,termination,error\n",
        );
        for c in &self.cells {
            let _ = write!(out, "{},{},{},{},{},", c.epsilon, opt(c.rho), opt(c.sigma), opt(c.t_star), c.seed);
            match &c.summary {
                Some(s) => {
                    let term = serde_json::to_value(s.termination)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_owned))
                        .unwrap_or_default();
                    let _ = write!(
                        out,
                        "{},{},{},{},{},{},",
                        s.jump_count,
                        opt(s.min_iet),
                        opt(s.mean_iet),
                        s.final_xy_norm,
                        opt(s.ball_radius_estimate),
                        term
                    );
                }
                None => out.push_str(",,,,,,"),
            }
            let _ = writeln!(out, "{}", c.error.as_deref().unwrap_or("").replace([',', '\n'], ";"));
        }
        out
    }
}
