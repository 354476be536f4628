//! JSON scenarios for single runs and sweeps.
//!
//! ```json
//! {
//!   "plant": { "a11": [[-1, 0], [-0.2, -0.05]], "...": "...", "epsilon": 0.01 },
//!   "lyapunov": { "p1": [[1, 0], [0, 1]], "p2": [[1]], "alpha1_bar": 2, "alpha2": 2, "l_bar": 1 },
//!   "policy": "deadzone", "sigma": 0.5, "rho": 0.05,
//!   "solver": { "horizon": 20 },
//!   "initial": { "ball_radius": 2.0 }
//! }
//! ```

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{summarize, ArcSummary};
use crate::certificate::{select_thm1, select_thm2, AnalysisMode, AnalysisParameters, Certificate, QuadraticLyapunovData};
use crate::hybrid::{Dims, HybridArc, HybridState};
use crate::plant::LinearPlantSpec;
use crate::simulator::{integrate_arc, Monitors, SolverConfig};
use crate::trigger::TriggerPolicy;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialCondition {
    Explicit {
        x: Vec<f64>,
        y: Vec<f64>,
        #[serde(default)]
        e: Option<Vec<f64>>,
        #[serde(default)]
        tau: Option<f64>,
    },
    /// `(x, y)` uniform in the ball of this radius, `e = 0`, seeded by the solver seed.
    Ball { ball_radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub plant: LinearPlantSpec,
    #[serde(default)]
    pub lyapunov: Option<QuadraticLyapunovData>,
    #[serde(flatten)]
    pub policy: TriggerPolicy,
    #[serde(default)]
    pub solver: SolverConfig,
    pub initial: InitialCondition,
    /// Selects analysis parameters so `R` can be monitored (`thm2`) or `theta` reported (`thm1`).
    #[serde(default)]
    pub analysis: Option<AnalysisMode>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub arc: HybridArc,
    pub summary: ArcSummary,
    pub params: Option<AnalysisParameters>,
}

/// Uniform sample of `(x, y)` in the ball of radius `radius`.
pub fn sample_ball(dims: Dims, radius: f64, seed: u64, clock: bool) -> HybridState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.nx + dims.ny;
    let w = loop {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        if v.norm_squared() <= 1.0 {
            break v * radius;
        }
    };
    HybridState {
        x: w.rows(0, dims.nx).into_owned(),
        y: w.rows(dims.nx, dims.ny).into_owned(),
        e: DVector::zeros(dims.nx),
        tau: clock.then_some(0.0),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.plant.validate()?;
        s.policy.validate()?;
        s.solver.validate()?;
        Ok(s)
    }

    pub fn initial_state(&self) -> Result<HybridState> {
        let dims = Dims {
            nx: self.plant.nx(),
            ny: self.plant.nz(),
        };
        let clock = self.policy.uses_clock();
        match &self.initial {
            InitialCondition::Explicit { x, y, e, tau } => {
                let e = e.clone().unwrap_or_else(|| vec![0.0; x.len()]);
                let tau = if clock { Some(tau.unwrap_or(0.0)) } else { None };
                let q = HybridState::new(
                    DVector::from_vec(x.clone()),
                    DVector::from_vec(y.clone()),
                    DVector::from_vec(e),
                    tau,
                )?;
                q.check_dims(dims)?;
                Ok(q)
            }
            InitialCondition::Ball { ball_radius } => {
                if !(*ball_radius >= 0.0 && ball_radius.is_finite()) {
                    return Err(Error::Config(format!("ball radius must be >= 0, got {ball_radius}")));
                }
                Ok(sample_ball(dims, *ball_radius, self.solver.seed, clock))
            }
        }
    }

    pub fn run(&self) -> Result<RunOutput> {
        let plant = self.plant.to_plant()?;
        let cert = self.lyapunov.clone().map(Certificate::new).transpose()?;
        let sigma = self.policy.sigma().unwrap_or(0.5);
        let params = match (self.analysis, &cert) {
            (None, _) => None,
            (Some(_), None) => return Err(Error::Config("analysis requires lyapunov data".into())),
            (Some(AnalysisMode::Thm1), Some(c)) => Some(select_thm1(&c.consts, sigma)?),
            (Some(AnalysisMode::Thm2), Some(c)) => match self.policy {
                TriggerPolicy::TimeRegularized { t_star, .. } => Some(select_thm2(&c.consts, sigma, t_star)?),
                _ => return Err(Error::Config("thm2 analysis needs the time-regularized policy".into())),
            },
        };
        let q0 = self.initial_state()?;
        let arc = integrate_arc(&plant, &self.policy, &q0, &self.solver, Monitors::new(cert.as_ref(), params.as_ref()))?;
        let summary = summarize(&arc);
        Ok(RunOutput { arc, summary, params })
    }
}
