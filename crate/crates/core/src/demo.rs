//! The shipped two-time-scale linear demo and its canned scenarios.
//!
//! The demo plant has `n_x = 2`, `n_z = 1`, `n_u = 1`. Its slow model under
//! `u = K x` is `x' = -x`, the boundary layer is `y' = -y / eps`, so
//! `P1 = I`, `P2 = 1` with decay rates 2 certify both.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::analysis::{self, summarize, ArcSummary, TransmissionComparison};
use crate::certificate::{self, select_thm1, select_thm2, AnalysisParameters, Certificate, QuadraticLyapunovData};
use crate::hybrid::{HybridArc, HybridState};
use crate::plant::{LinearPlantSpec, PlantSpec};
use crate::simulator::{integrate_arc, Monitors, Propagator, SolverConfig};
use crate::trigger::TriggerPolicy;
use crate::Result;

pub const DEMO_SIGMA: f64 = 0.5;
pub const DEMO_RHO: f64 = 0.05;
/// Requested dwell time as a fraction of the admissible bound.
pub const DWELL_FRACTION: f64 = 0.9;
pub const EXACT_STEP: f64 = 0.05;

pub fn demo_linear_plant(epsilon: f64) -> LinearPlantSpec {
    let m = |r: usize, c: usize, v: &[f64]| DMatrix::from_row_slice(r, c, v);
    LinearPlantSpec {
        a11: m(2, 2, &[-1.0, 0.0, -0.2, -0.05]),
        a12: m(2, 1, &[0.0, 0.8]),
        a21: m(1, 2, &[0.5, 0.0]),
        a22: m(1, 1, &[-1.0]),
        b1: m(2, 1, &[0.0, 0.6]),
        b2: m(1, 1, &[0.5]),
        k_gain: m(1, 2, &[-0.2, -0.95]),
        epsilon,
    }
}

pub fn demo_lyapunov() -> QuadraticLyapunovData {
    QuadraticLyapunovData {
        p1: DMatrix::identity(2, 2),
        p2: DMatrix::identity(1, 1),
        alpha1_bar: 2.0,
        alpha2: 2.0,
        l_bar: 1.0,
    }
}

pub fn demo_certificate() -> Certificate {
    Certificate::new(demo_lyapunov()).expect("demo data is positive definite")
}

/// Scalar nonlinear plant with root `h(x, u) = tanh(x)/2 + u`, used to exercise the
/// adaptive integrator and the finite-difference Jacobian.
pub fn nonlinear_plant(epsilon: f64) -> Result<PlantSpec> {
    let v = |a: f64| DVector::from_element(1, a);
    PlantSpec::new(
        1,
        1,
        1,
        epsilon,
        Arc::new(move |x, z, u| v(-x[0] + 0.5 * z[0].sin() + 0.5 * u[0])),
        Arc::new(move |x, z, u| v(-z[0] + 0.5 * x[0].tanh() + u[0])),
        Arc::new(move |x, u| v(0.5 * x[0].tanh() + u[0])),
        Arc::new(move |x| v(-3.0 * x[0])),
        None,
    )
}

/// Initial condition shared by the canned scenarios.
pub fn demo_initial(clock: bool) -> HybridState {
    HybridState {
        x: DVector::from_vec(vec![1.0, -1.0]),
        y: DVector::from_vec(vec![0.5]),
        e: DVector::zeros(2),
        tau: clock.then_some(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemoKind {
    Zeno,
    DeadZone,
    Dwell,
    Compare,
}

impl std::str::FromStr for DemoKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeno" => Ok(DemoKind::Zeno),
            "deadzone" => Ok(DemoKind::DeadZone),
            "dwell" => Ok(DemoKind::Dwell),
            "compare" => Ok(DemoKind::Compare),
            other => Err(crate::Error::Config(format!("unknown demo {other}"))),
        }
    }
}

/// Named text artifacts produced by a demo.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoOutput {
    pub files: Vec<(String, String)>,
}

fn arc_files(prefix: &str, arc: &HybridArc, summary: &ArcSummary) -> Vec<(String, String)> {
    vec![
        (format!("{prefix}arc.csv"), arc.to_csv()),
        (
            format!("{prefix}events.json"),
            serde_json::to_string_pretty(&arc.event_log_json()).expect("json"),
        ),
        (
            format!("{prefix}summary.json"),
            serde_json::to_string_pretty(summary).expect("json"),
        ),
    ]
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("json")
}

/// Certified dead-zone setup: parameters, plant at the certified epsilon and solver.
pub fn deadzone_setup(rho: f64) -> Result<(AnalysisParameters, PlantSpec, TriggerPolicy, SolverConfig)> {
    let cert = demo_certificate();
    let params = select_thm1(&cert.consts, DEMO_SIGMA)?;
    let plant = demo_linear_plant(params.epsilon_star).to_plant()?;
    let policy = TriggerPolicy::DeadZone { sigma: DEMO_SIGMA, rho };
    let cfg = SolverConfig {
        horizon: 20.0,
        ..SolverConfig::default()
    };
    Ok((params, plant, policy, cfg))
}

/// Certified time-regularized setup with exact linear propagation.
pub fn dwell_setup() -> Result<(AnalysisParameters, PlantSpec, TriggerPolicy, SolverConfig)> {
    let cert = demo_certificate();
    let c = &cert.consts;
    let t_cal = certificate::compute_calt(c.m, c.n, c.gamma1_bar(), c.alpha1)?;
    let t_star = DWELL_FRACTION * t_cal;
    let params = select_thm2(c, DEMO_SIGMA, t_star)?;
    let plant = demo_linear_plant(params.epsilon_star).to_plant()?;
    let policy = TriggerPolicy::TimeRegularized {
        sigma: DEMO_SIGMA,
        t_star,
    };
    let psi = params.psi.expect("dwell mode sets psi");
    let cfg = SolverConfig {
        horizon: 50.0 / psi,
        propagator: Propagator::LinearExact { step: EXACT_STEP },
        ..SolverConfig::default()
    };
    Ok((params, plant, policy, cfg))
}

pub fn run_demo(kind: DemoKind) -> Result<DemoOutput> {
    let cert = demo_certificate();
    let files = match kind {
        DemoKind::Zeno => {
            let plant = demo_linear_plant(0.01).to_plant()?;
            let policy = TriggerPolicy::Naive { sigma: DEMO_SIGMA };
            let q0 = HybridState::zeros(plant.dims(), false);
            let cfg = SolverConfig {
                horizon: 1.0,
                ..SolverConfig::default()
            };
            let arc = integrate_arc(&plant, &policy, &q0, &cfg, Monitors::new(Some(&cert), None))?;
            let summary = summarize(&arc);
            arc_files("zeno_", &arc, &summary)
        }
        DemoKind::DeadZone => {
            let (params, plant, policy, cfg) = deadzone_setup(DEMO_RHO)?;
            let arc = integrate_arc(&plant, &policy, &demo_initial(false), &cfg, Monitors::new(Some(&cert), Some(&params)))?;
            let summary = summarize(&arc);
            let mut f = arc_files("deadzone_", &arc, &summary);
            f.push(("deadzone_certificate.json".into(), json(&params)));
            f
        }
        DemoKind::Dwell => {
            let (params, plant, policy, cfg) = dwell_setup()?;
            let arc = integrate_arc(&plant, &policy, &demo_initial(true), &cfg, Monitors::new(Some(&cert), Some(&params)))?;
            let summary = summarize(&arc);
            let mut f = arc_files("dwell_", &arc, &summary);
            f.push(("dwell_certificate.json".into(), json(&params)));
            f
        }
        DemoKind::Compare => {
            let (params, plant, policy, mut cfg) = dwell_setup()?;
            let t_star = params.t_star.expect("dwell mode sets t_star");
            cfg.horizon = 100.0 * t_star;
            let periodic = TriggerPolicy::Periodic { period: t_star };
            let cmp: TransmissionComparison = analysis::transmission_comparison(
                &plant,
                &demo_initial(true),
                cfg.horizon,
                &policy,
                &periodic,
                &cfg,
                Monitors::new(Some(&cert), None),
            )?;
            vec![("compare_summary.json".into(), json(&cmp))]
        }
    };
    Ok(DemoOutput { files })
}
