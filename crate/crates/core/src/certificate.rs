//! Constants of the stability certificate derived from quadratic Lyapunov data,
//! sampled validation of the underlying inequalities, the dwell-time bound and
//! the selection of analysis parameters (decay margins, the singular-perturbation
//! bound `eps*`, the `R`-function weight `d` and the hybrid decay rate `psi`).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hybrid::HybridState;
use crate::linalg::{self, is_symmetric, lambda_max, lambda_min, quad_form, spectral_norm};
use crate::ode::{integrate_until, DenseStep, Dopri5};
use crate::plant::PlantSpec;
use crate::trigger::{GammaForm, ThresholdData};
use crate::{Error, Result};

/// Quadratic data `V_x = x' P1 x`, `V_y = y' P2 y` with decay rates and a common Lipschitz constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticLyapunovData {
    #[serde(with = "linalg::rows")]
    pub p1: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub p2: DMatrix<f64>,
    pub alpha1_bar: f64,
    pub alpha2: f64,
    pub l_bar: f64,
}

impl QuadraticLyapunovData {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("P1", &self.p1), ("P2", &self.p2)] {
            if p.is_empty() || !is_symmetric(p, 1e-12) {
                return Err(Error::Certificate(format!("{name} is not symmetric")));
            }
            let lmin = lambda_min(p);
            if !(lmin > 0.0) {
                return Err(Error::Certificate(format!(
                    "{name} is not positive definite (min eigenvalue {lmin})"
                )));
            }
        }
        for (name, v) in [
            ("alpha1_bar", self.alpha1_bar),
            ("alpha2", self.alpha2),
            ("l_bar", self.l_bar),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Certificate(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub alpha1: f64,
    pub gamma1: GammaForm,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub gamma2: GammaForm,
    pub l_link: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub m: f64,
    pub n: f64,
}

impl AssumptionConstants {
    pub fn gamma1_bar(&self) -> f64 {
        self.gamma1.coeff
    }

    pub fn gamma2_bar(&self) -> f64 {
        self.gamma2.coeff
    }

    /// `gamma2 o gamma1^-1 (s) <= l_link s`, decided on the power-law coefficients.
    pub fn link_holds(&self) -> bool {
        self.gamma1
            .linear_link(&self.gamma2)
            .is_some_and(|c| c <= self.l_link * (1.0 + 1e-12))
    }
}

/// Closed-form constants for globally Lipschitz data with quadratic Lyapunov functions.
pub fn derive_constants(data: &QuadraticLyapunovData) -> Result<AssumptionConstants> {
    data.validate()?;
    let n1 = spectral_norm(&data.p1);
    let n2 = spectral_norm(&data.p2);
    let l1 = lambda_min(&data.p1);
    let l2 = lambda_min(&data.p2);
    let a1b = data.alpha1_bar;
    let l = data.l_bar;
    let c = AssumptionConstants {
        alpha1: a1b / 2.0,
        gamma1: GammaForm::quadratic(2.0 * l * l * n1 * n1 / (a1b * l1)),
        alpha2: data.alpha2,
        beta1: 2.0 * l * n1 / (l1 * l2).sqrt(),
        beta2: 2.0 * l * l * n2 / (l1 * l2).sqrt(),
        beta3: 4.0 * l * l * n2 / l2,
        gamma2: GammaForm::quadratic(2.0 * l * l * n2),
        l_link: a1b * l1 * n2 / (n1 * n1),
        lambda1: 0.5 * a1b * l1 * n2 / (n1 * n1),
        lambda2: (a1b * l1 * n2 * n2 / (l2 * n1 * n1)).sqrt(),
        m: l,
        n: l * l1.powf(-0.5).max(l2.powf(-0.5)),
    };
    Ok(c)
}

/// Lyapunov data together with its derived constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub data: QuadraticLyapunovData,
    pub consts: AssumptionConstants,
}

impl Certificate {
    pub fn new(data: QuadraticLyapunovData) -> Result<Self> {
        let consts = derive_constants(&data)?;
        Ok(Self { data, consts })
    }

    pub fn vx(&self, x: &DVector<f64>) -> f64 {
        quad_form(&self.data.p1, x)
    }

    pub fn vy(&self, y: &DVector<f64>) -> f64 {
        quad_form(&self.data.p2, y)
    }

    pub fn threshold_data(&self) -> ThresholdData {
        ThresholdData {
            p1: self.data.p1.clone(),
            alpha1: self.consts.alpha1,
            gamma1: self.consts.gamma1,
        }
    }

    /// `V = V_x + sqrt(eps) V_y`
    pub fn monitor_v(&self, q: &HybridState, epsilon: f64) -> f64 {
        self.vx(&q.x) + epsilon.sqrt() * self.vy(&q.y)
    }

    /// `R = V_x + d V_y + max(0, gamma1_bar zeta |e|^2)`
    pub fn monitor_r(&self, q: &HybridState, d: f64, zeta: f64) -> f64 {
        self.vx(&q.x) + d * self.vy(&q.y) + (self.consts.gamma1_bar() * zeta * q.e.norm_squared()).max(0.0)
    }

    pub fn check_plant(&self, spec: &PlantSpec) -> Result<()> {
        for (what, expected, got) in [("P1 size", spec.nx, self.data.p1.nrows()), ("P2 size", spec.nz, self.data.p2.nrows())] {
            if expected != got {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        Ok(())
    }
}

pub const ASSUMPTION_FAMILIES: [&str; 6] = [
    "slow_iss",
    "fast_decay",
    "interconnection_slow",
    "interconnection_fast",
    "jump_growth",
    "error_growth",
];

/// Slack (right side minus left side) of each sampled inequality at one point.
pub fn assumption_slacks(
    spec: &PlantSpec,
    cert: &Certificate,
    x: &DVector<f64>,
    y: &DVector<f64>,
    e: &DVector<f64>,
) -> [f64; 6] {
    let c = &cert.consts;
    let p1 = &cert.data.p1;
    let p2 = &cert.data.p2;
    let vx = cert.vx(x);
    let vy = cert.vy(y);
    let en = e.norm();
    let g1 = c.gamma1.eval(en);
    let grad_vx = 2.0 * (p1 * x);
    let grad_vy = 2.0 * (p2 * y);

    let fs = spec.reduced_slow_flow(x, e);
    let fx = spec.f_x(x, y, e);
    let gf = spec.reduced_fast_flow(x, y, e);
    let u = spec.held_input(x, e);
    let dh = spec.dh_dx(x, &u);

    let slow_iss = -c.alpha1 * vx + g1 - grad_vx.dot(&fs);
    let fast_decay = -c.alpha2 * vy - grad_vy.dot(&gf);
    let cross = (vx * vy).sqrt();
    let inter_slow = c.beta1 * cross - grad_vx.dot(&(&fx - &fs));
    // V_y does not depend on x for quadratic data
    let inter_fast = c.beta2 * cross + c.beta3 * vy + c.gamma2.eval(en) + (grad_vy.transpose() * &dh * &fx)[(0, 0)];
    let y_plus = spec.jump_map_hy(x, y, e);
    let jump = vy + c.lambda1 * g1 + c.lambda2 * (g1 * vy).sqrt() - cert.vy(&y_plus);
    let growth = if en > 0.0 { -e.dot(&fx) / en } else { fx.norm() };
    let error_growth = c.m * en + c.n * (vx.sqrt() + vy.sqrt()) - growth;
    [slow_iss, fast_decay, inter_slow, inter_fast, jump, error_growth]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyCheck {
    pub name: &'static str,
    pub worst_slack: f64,
    pub passed: bool,
    /// `(x, y, e)` at the worst slack, present when the family fails.
    pub witness: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub n_samples: usize,
    pub half_width: f64,
    pub families: Vec<FamilyCheck>,
    pub link_ok: bool,
    pub passed: bool,
}

pub const SLACK_TOL: f64 = 1e-9;

/// Samples `(x, y, e)` uniformly in `[-half_width, half_width]^dim` and records the
/// worst slack of each inequality family.
pub fn validate_assumptions(
    spec: &PlantSpec,
    cert: &Certificate,
    n_samples: usize,
    half_width: f64,
    seed: u64,
) -> Result<AssumptionReport> {
    cert.check_plant(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [f64::INFINITY; 6];
    let mut at: [Option<Vec<f64>>; 6] = Default::default();
    let draw = |n: usize, rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| rng.gen_range(-half_width..=half_width));
    for _ in 0..n_samples {
        let x = draw(spec.nx, &mut rng);
        let y = draw(spec.nz, &mut rng);
        let e = draw(spec.nx, &mut rng);
        let s = assumption_slacks(spec, cert, &x, &y, &e);
        for i in 0..6 {
            let si = if s[i].is_nan() { f64::NEG_INFINITY } else { s[i] };
            if si < worst[i] {
                worst[i] = si;
                at[i] = Some(x.iter().chain(y.iter()).chain(e.iter()).copied().collect());
            }
        }
    }
    let families: Vec<FamilyCheck> = (0..6)
        .map(|i| {
            let passed = worst[i] >= -SLACK_TOL;
            FamilyCheck {
                name: ASSUMPTION_FAMILIES[i],
                worst_slack: worst[i],
                passed,
                witness: if passed { None } else { at[i].take() },
            }
        })
        .collect();
    let link_ok = cert.consts.link_holds();
    let passed = link_ok && families.iter().all(|f| f.passed);
    Ok(AssumptionReport {
        n_samples,
        half_width,
        families,
        link_ok,
        passed,
    })
}

/// Upper limit on admissible dwell times for the time-regularized trigger.
pub fn compute_calt(m: f64, n: f64, gamma1_bar: f64, alpha1: f64) -> Result<f64> {
    for (name, v) in [("M", m), ("N", n), ("gamma1_bar", gamma1_bar), ("alpha1", alpha1)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    let ratio = gamma1_bar * n * n / (alpha1 * m * m);
    let r = (ratio - 1.0).abs().sqrt();
    Ok(if r == 0.0 {
        1.0 / m
    } else if ratio > 1.0 {
        r.atan() / (m * r)
    } else {
        r.atanh() / (m * r)
    })
}

/// Dense solution of the comparison equation for `zeta` from `1/vartheta` down to `vartheta`.
#[derive(Debug, Clone)]
pub struct ZetaTrajectory {
    pub mu: f64,
    pub vartheta: f64,
    pub t_tilde: f64,
    steps: Vec<DenseStep>,
}

impl ZetaTrajectory {
    /// `zeta(tau)`, frozen at `vartheta` beyond `t_tilde`.
    pub fn eval(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 1.0 / self.vartheta;
        }
        if tau >= self.t_tilde {
            return self.vartheta;
        }
        let i = self.steps.partition_point(|s| s.t0 <= tau).saturating_sub(1);
        self.steps[i].eval(tau)[0]
    }

    /// `zeta` on `n` evenly spaced points of `[0, t_tilde]`.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| self.eval(self.t_tilde * i as f64 / (n - 1).max(1) as f64))
            .collect()
    }
}

/// Integrates `zeta' = -1 - 2 M zeta - mu - (mu zeta + gamma1_bar/(alpha1 - mu) (N zeta)^2)`
/// from `zeta(0) = 1/vartheta` until `zeta = vartheta`.
pub fn integrate_zeta(
    mu: f64,
    vartheta: f64,
    m: f64,
    n: f64,
    gamma1_bar: f64,
    alpha1: f64,
) -> Result<ZetaTrajectory> {
    if !(mu > 0.0 && mu < alpha1) {
        return Err(Error::Domain(format!("mu must lie in (0, alpha1 = {alpha1}), got {mu}")));
    }
    if !(vartheta > 0.0 && vartheta < 1.0) {
        return Err(Error::Domain(format!("vartheta must lie in (0, 1), got {vartheta}")));
    }
    let q = gamma1_bar / (alpha1 - mu);
    let rhs = move |_t: f64, z: &DVector<f64>| {
        let zeta = z[0];
        DVector::from_element(1, -1.0 - 2.0 * m * zeta - mu - (mu * zeta + q * (n * zeta).powi(2)))
    };
    // zeta decreases at least at unit rate
    let cap = 1.0 / vartheta - vartheta + 1.0;
    let solver = Dopri5::new(1e-10, 1e-12);
    let (t_tilde, steps) = integrate_until(
        &solver,
        rhs,
        0.0,
        DVector::from_element(1, 1.0 / vartheta),
        cap,
        cap,
        |z| z[0] - vartheta,
        1e-14,
    )?;
    Ok(ZetaTrajectory {
        mu,
        vartheta,
        t_tilde,
        steps,
    })
}

/// Which stability analysis selects the parameters: practical (`thm1`) or asymptotic (`thm2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalysisMode {
    Thm1,
    Thm2,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisParameters {
    pub mode: AnalysisMode,
    pub sigma: f64,
    pub mu: f64,
    pub epsilon_star: f64,
    pub lambda_jump: f64,
    pub theta: Option<f64>,
    pub vartheta: Option<f64>,
    pub t_cal: Option<f64>,
    pub t_star: Option<f64>,
    pub t_tilde: Option<f64>,
    pub d: Option<f64>,
    pub psi: Option<f64>,
    /// Grid points where the leading-minor test and the eigenvalue test disagree.
    pub eig_discrepancies: Option<usize>,
    #[serde(skip)]
    pub zeta: Option<ZetaTrajectory>,
}

/// Extra condition bounding the practical-ball growth caused by jumps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpCompensation {
    pub rho: f64,
    pub xi: f64,
    pub lambda: f64,
}

pub enum EpsilonProblem<'a> {
    Thm1 {
        mu: f64,
        jump: Option<JumpCompensation>,
    },
    Thm2 {
        mu: f64,
        d: f64,
        zeta: &'a ZetaTrajectory,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonStar {
    pub value: f64,
    pub eig_discrepancies: usize,
}

pub const EPSILON_FLOOR: f64 = 1e-12;
pub const ZETA_GRID: usize = 64;

/// Matrix conditions of the practical-stability proof at a given `eps`.
pub fn thm1_conditions_hold(
    c: &AssumptionConstants,
    sigma: f64,
    mu: f64,
    eps: f64,
    jump: Option<JumpCompensation>,
) -> bool {
    let se = eps.sqrt();
    let a = c.alpha1 * (1.0 - sigma * (1.0 + se * c.l_link));
    let first = a >= mu;
    let second = (a - mu) * (c.alpha2 / se - se * (c.beta3 + mu)) >= (c.beta1 + se * c.beta2).powi(2) / 4.0;
    let third = se <= eps.powf(0.25);
    let fourth = jump.map_or(true, |j| {
        (4.0 / mu) * (1.0 + 2.0 * eps.powf(0.25) * j.lambda).ln() <= j.rho / j.xi
    });
    first && second && third && fourth
}

/// `A1 - mu diag(1, d, gamma1_bar zeta)` for one value of `zeta`.
pub fn thm2_shifted_matrix(c: &AssumptionConstants, mu: f64, d: f64, zeta: f64, eps: f64) -> DMatrix<f64> {
    let g1 = c.gamma1_bar();
    let a = c.alpha1 - mu;
    let b = c.beta1 + d * c.beta2;
    let g = g1 * c.n * zeta;
    let dd = d * (c.alpha2 / eps - c.beta3 - mu);
    let w = g1 * mu + g1 * g1 * c.n * c.n * zeta * zeta / (c.alpha1 - mu) - d * c.gamma2_bar();
    DMatrix::from_row_slice(3, 3, &[a, -b / 2.0, -g, -b / 2.0, dd, -g, -g, -g, w])
}

/// Leading principal minors of `A1 - mu diag(1, d, gamma1_bar zeta)`, the determinant in
/// expanded scalar form.
pub fn thm2_minors_hold(c: &AssumptionConstants, mu: f64, d: f64, zeta: f64, eps: f64) -> bool {
    let g1 = c.gamma1_bar();
    let a = c.alpha1 - mu;
    let b = c.beta1 + d * c.beta2;
    let dd = d * (c.alpha2 / eps - c.beta3 - mu);
    if a < 0.0 || a * dd < b * b / 4.0 {
        return false;
    }
    let g = g1 * c.n * zeta;
    // upsilon - mu gamma1_bar zeta
    let w = g1 * mu + g1 * g1 * c.n * c.n * zeta * zeta / (c.alpha1 - mu) - d * c.gamma2_bar();
    let det = a * (dd * w - g * g) + (b / 2.0) * (-(b / 2.0) * w - g * g) - g * ((b / 2.0) * g + g * dd);
    det >= 0.0
}

/// Conditions of the asymptotic-stability proof: minors on the `zeta` grid plus the
/// two-by-two matrix used once the threshold term is inactive.
pub fn thm2_conditions_hold(
    c: &AssumptionConstants,
    sigma: f64,
    mu: f64,
    d: f64,
    zetas: &[f64],
    eps: f64,
) -> bool {
    if !zetas.iter().all(|&z| thm2_minors_hold(c, mu, d, z, eps)) {
        return false;
    }
    let b = c.beta1 + d * c.beta2;
    let a11 = c.alpha1 * (1.0 - sigma * (1.0 + d * c.gamma2_bar() / c.gamma1_bar()));
    if a11 < mu {
        return false;
    }
    (a11 - mu) * (d * c.alpha2 / eps - d * c.beta3 - d * mu) >= b * b / 4.0
}

/// Positive semidefiniteness of the shifted matrix by its smallest eigenvalue.
pub fn thm2_eigen_holds(c: &AssumptionConstants, mu: f64, d: f64, zeta: f64, eps: f64) -> bool {
    let b = thm2_shifted_matrix(c, mu, d, zeta, eps);
    let scale = b.amax().max(1.0);
    lambda_min(&b) >= -1e-12 * scale
}

fn check_mu(c: &AssumptionConstants, sigma: f64, problem: &EpsilonProblem<'_>) -> Result<()> {
    let (mu, upper) = match *problem {
        EpsilonProblem::Thm1 { mu, .. } => (mu, c.alpha1 * (1.0 - sigma)),
        EpsilonProblem::Thm2 { mu, .. } => (mu, c.alpha1),
    };
    if mu > 0.0 && mu < upper {
        Ok(())
    } else {
        Err(Error::Domain(format!("mu must lie in (0, {upper}), got {mu}")))
    }
}

/// Largest `eps` in `[1e-12, 1]` for which the certificate conditions hold, by bisection in `log eps`.
pub fn epsilon_star_search(c: &AssumptionConstants, sigma: f64, problem: EpsilonProblem<'_>) -> Result<EpsilonStar> {
    check_mu(c, sigma, &problem)?;
    let zetas = match &problem {
        EpsilonProblem::Thm2 { zeta, .. } => zeta.grid(ZETA_GRID),
        EpsilonProblem::Thm1 { .. } => Vec::new(),
    };
    let ok = |eps: f64| match problem {
        EpsilonProblem::Thm1 { mu, jump } => thm1_conditions_hold(c, sigma, mu, eps, jump),
        EpsilonProblem::Thm2 { mu, d, .. } => thm2_conditions_hold(c, sigma, mu, d, &zetas, eps),
    };
    let value = if ok(1.0) {
        1.0
    } else if !ok(EPSILON_FLOOR) {
        return Err(Error::CertificateInfeasible {
            floor: EPSILON_FLOOR,
            reason: "conditions fail at the smallest admissible epsilon".into(),
        });
    } else {
        let (mut lo, mut hi) = (EPSILON_FLOOR.ln(), 0.0_f64);
        for _ in 0..200 {
            if hi - lo < 1e-13 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if ok(mid.exp()) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo.exp()
    };
    if !ok(value) {
        return Err(Error::Certificate(format!("postcondition failed at eps = {value:e}")));
    }
    let eig_discrepancies = match problem {
        EpsilonProblem::Thm2 { mu, d, .. } => zetas
            .iter()
            .filter(|&&z| thm2_eigen_holds(c, mu, d, z, value) != thm2_minors_hold(c, mu, d, z, value))
            .count(),
        EpsilonProblem::Thm1 { .. } => 0,
    };
    Ok(EpsilonStar {
        value,
        eig_discrepancies,
    })
}

/// Jump growth factor of the practical-stability proof.
pub fn thm1_lambda(c: &AssumptionConstants, sigma: f64) -> f64 {
    (c.lambda1 + c.lambda2) * (sigma * c.alpha1).max(1.0)
}

/// Jump growth factor of the asymptotic-stability proof.
pub fn thm2_lambda(c: &AssumptionConstants, sigma: f64) -> f64 {
    c.lambda2.max((c.lambda1 + c.lambda2) * sigma * c.alpha1)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("sigma must lie in (0, 1), got {sigma}")))
    }
}

/// Parameters for the dead-zone trigger. The returned `epsilon_star` covers the flow
/// conditions only; see [`epsilon_star_search`] with [`JumpCompensation`] for the full bound.
pub fn select_thm1(c: &AssumptionConstants, sigma: f64) -> Result<AnalysisParameters> {
    check_sigma(sigma)?;
    let mu = 0.5 * c.alpha1 * (1.0 - sigma);
    let lambda = thm1_lambda(c, sigma);
    let theta = (1.0 + 2.0 * lambda) * (2.0 * (1.0 + c.l_link) / mu).max(1.0);
    let eps = epsilon_star_search(c, sigma, EpsilonProblem::Thm1 { mu, jump: None })?;
    Ok(AnalysisParameters {
        mode: AnalysisMode::Thm1,
        sigma,
        mu,
        epsilon_star: eps.value,
        lambda_jump: lambda,
        theta: Some(theta),
        vartheta: None,
        t_cal: None,
        t_star: None,
        t_tilde: None,
        d: None,
        psi: None,
        eig_discrepancies: None,
        zeta: None,
    })
}

/// Upper ends of the five intervals bounding `d`.
pub fn d_bounds(c: &AssumptionConstants, sigma: f64, mu: f64, vartheta: f64, t_star: f64) -> [f64; 5] {
    let ratio = c.gamma1_bar() / c.gamma2_bar();
    let lambda = thm2_lambda(c, sigma);
    [
        ratio * mu,
        (1.0 - sigma) / sigma * ratio,
        vartheta.powi(2) / (c.lambda1 + c.lambda2).powi(2),
        ((mu * t_star).exp() - 1.0).powi(2) / lambda.powi(2),
        1.0,
    ]
}

/// Midpoint of the admissible interval for `psi`, if it is non-empty.
pub fn psi_midpoint(mu: f64, lambda: f64, d: f64, t_star: f64) -> Option<f64> {
    let upper = (mu - (1.0 + lambda * d.sqrt()).ln() / t_star) / (1.0 / t_star + 1.0);
    (upper > 0.0).then_some(0.5 * upper)
}

const VARTHETA_GRID: usize = 40;

/// Parameters for the time-regularized trigger with dwell time `t_star`.
///
/// For each `vartheta` on a logarithmic grid the largest `mu` with `T~(mu, vartheta) >= t_star`
/// is found by bisection; the pair maximizing `psi * eps*` is kept.
pub fn select_thm2(c: &AssumptionConstants, sigma: f64, t_star: f64) -> Result<AnalysisParameters> {
    check_sigma(sigma)?;
    let g1 = c.gamma1_bar();
    let t_cal = compute_calt(c.m, c.n, g1, c.alpha1)?;
    if !(t_star > 0.0) {
        return Err(Error::Domain(format!("t_star must be positive, got {t_star}")));
    }
    if t_star >= t_cal {
        return Err(Error::InfeasibleDwell { t_star, t_cal });
    }
    let lambda = thm2_lambda(c, sigma);
    let t_tilde = |mu: f64, vt: f64| integrate_zeta(mu, vt, c.m, c.n, g1, c.alpha1).map(|z| z.t_tilde);
    let (lv_lo, lv_hi) = (1e-4_f64.ln(), 0.98_f64.ln());
    let candidates: Vec<Option<AnalysisParameters>> = (0..VARTHETA_GRID)
        .into_par_iter()
        .map(|i| {
            let vt = (lv_lo + (lv_hi - lv_lo) * i as f64 / (VARTHETA_GRID - 1) as f64).exp();
            let (mut lo, mut hi) = (1e-4 * c.alpha1, c.alpha1 * (1.0 - 1e-9));
            if t_tilde(lo, vt).ok()? < t_star {
                return None;
            }
            if t_tilde(hi, vt).ok()? >= t_star {
                lo = hi;
            } else {
                for _ in 0..50 {
                    let mid = 0.5 * (lo + hi);
                    if t_tilde(mid, vt).ok()? >= t_star {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
            let mu = lo;
            let zeta = integrate_zeta(mu, vt, c.m, c.n, g1, c.alpha1).ok()?;
            let d = 0.5 * d_bounds(c, sigma, mu, vt, t_star).iter().copied().fold(f64::INFINITY, f64::min);
            let psi = psi_midpoint(mu, lambda, d, t_star)?;
            let eps = epsilon_star_search(c, sigma, EpsilonProblem::Thm2 { mu, d, zeta: &zeta }).ok()?;
            Some(AnalysisParameters {
                mode: AnalysisMode::Thm2,
                sigma,
                mu,
                epsilon_star: eps.value,
                lambda_jump: lambda,
                theta: None,
                vartheta: Some(vt),
                t_cal: Some(t_cal),
                t_star: Some(t_star),
                t_tilde: Some(zeta.t_tilde),
                d: Some(d),
                psi: Some(psi),
                eig_discrepancies: Some(eps.eig_discrepancies),
                zeta: Some(zeta),
            })
        })
        .collect();
    let score = |p: &AnalysisParameters| p.psi.unwrap_or(0.0) * p.epsilon_star;
    let best = candidates
        .into_iter()
        .flatten()
        .fold(None::<AnalysisParameters>, |best, p| match best {
            Some(b) if score(&b) >= score(&p) => Some(b),
            _ => Some(p),
        })
        .ok_or_else(|| Error::CertificateInfeasible {
            floor: EPSILON_FLOOR,
            reason: format!("no (mu, vartheta) pair certifies t_star = {t_star}"),
        })?;
    if best.t_tilde.unwrap_or(0.0) < t_star {
        return Err(Error::Certificate("selected pair violates T~ >= t_star".into()));
    }
    Ok(best)
}

/// Asymptotic mode when a dwell time is requested, practical mode otherwise.
pub fn select_analysis_parameters(c: &AssumptionConstants, sigma: f64, t_star: Option<f64>) -> Result<AnalysisParameters> {
    match t_star {
        Some(t) => select_thm2(c, sigma, t),
        None => select_thm1(c, sigma),
    }
}

/// Bound on `|(x, y, e)|` implied by `V <= theta rho` inside the dead-zone flow set.
pub fn practical_norm_bound(cert: &Certificate, epsilon: f64, sigma: f64, rho: f64, theta: f64) -> f64 {
    let l1 = lambda_min(&cert.data.p1);
    let l2 = lambda_min(&cert.data.p2);
    let v = theta * rho;
    let xy2 = v / l1.min(epsilon.sqrt() * l2);
    let e2 = cert.consts.gamma1.inverse((sigma * cert.consts.alpha1 * v).max(rho)).powi(2);
    (xy2 + e2).sqrt()
}

/// Sampled estimate of the largest growth rate of `gamma1(|e|)` along flows from the
/// sublevel set reached from the ball of radius `delta`, inflated by 10%.
pub fn xi_hat(
    spec: &PlantSpec,
    cert: &Certificate,
    delta: f64,
    theta_rho: f64,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    cert.check_plant(spec)?;
    let eps = spec.epsilon;
    let (nx, nz) = (spec.nx, spec.nz);
    let p1 = &cert.data.p1;
    let p2 = &cert.data.p2;
    let level = (delta * delta * lambda_max(p1).max(eps.sqrt() * lambda_max(p2))).max(theta_rho);
    let mut joint = DMatrix::zeros(nx + nz, nx + nz);
    joint.view_mut((0, 0), (nx, nx)).copy_from(p1);
    joint.view_mut((nx, nx), (nz, nz)).copy_from(&(p2 * eps.sqrt()));
    let to_joint = inverse_sqrt(&joint) * level.sqrt();
    let to_slow = inverse_sqrt(p1) * level.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sup = 0.0_f64;
    for _ in 0..n_samples {
        let w = &to_joint * unit_ball(nx + nz, &mut rng);
        let x = w.rows(0, nx).into_owned();
        let y = w.rows(nx, nz).into_owned();
        let xs = &to_slow * unit_ball(nx, &mut rng);
        let e = xs - &x;
        let rate = cert.consts.gamma1.derivative(e.norm()) * spec.f_x(&x, &y, &e).norm();
        if rate.is_finite() {
            sup = sup.max(rate);
        }
    }
    Ok(1.1 * sup)
}

fn inverse_sqrt(p: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = p.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

fn unit_ball(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        if v.norm_squared() <= 1.0 {
            return v;
        }
    }
}
