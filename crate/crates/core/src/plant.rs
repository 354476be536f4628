//! Plant data and the closed-loop maps built from it.
//!
//! A plant is `x' = f(x, z, u)`, `eps z' = g(x, z, u)` with a selected root
//! `z = h(x, u)` of `g(x, ., u) = 0` and an emulated controller `u = k(x + e)`.
//! Everything here works in the shifted coordinate `y = z - h(x, u)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hybrid::{Dims, HybridState};
use crate::linalg::{self, all_finite};
use crate::{Error, Result};

pub type XzuFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type XuFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type JacFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type FeedbackFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Samples and half-width used by the load-time root check.
pub const ROOT_CHECK_SAMPLES: usize = 10_000;
pub const ROOT_CHECK_BOX: f64 = 10.0;
pub const ROOT_CHECK_TOL: f64 = 1e-9;

/// A singularly perturbed plant with a selected quasi-steady-state root and a feedback law.
#[derive(Clone)]
pub struct PlantSpec {
    pub nx: usize,
    pub nz: usize,
    pub nu: usize,
    pub epsilon: f64,
    f: XzuFn,
    g: XzuFn,
    h: XuFn,
    dh_dx: Option<JacFn>,
    k: FeedbackFn,
    linear: Option<LinearPlantSpec>,
}

impl fmt::Debug for PlantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantSpec")
            .field("nx", &self.nx)
            .field("nz", &self.nz)
            .field("nu", &self.nu)
            .field("epsilon", &self.epsilon)
            .field("analytic_dh_dx", &self.dh_dx.is_some())
            .field("linear", &self.linear.is_some())
            .finish()
    }
}

impl PlantSpec {
    /// Builds a plant and runs the dimension probe and the root-consistency check.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        nx: usize,
        nz: usize,
        nu: usize,
        epsilon: f64,
        f: XzuFn,
        g: XzuFn,
        h: XuFn,
        k: FeedbackFn,
        dh_dx: Option<JacFn>,
    ) -> Result<Self> {
        let spec = Self {
            nx,
            nz,
            nu,
            epsilon,
            f,
            g,
            h,
            dh_dx,
            k,
            linear: None,
        };
        spec.check_epsilon()?;
        spec.probe_dims()?;
        let worst = spec.root_residual(ROOT_CHECK_SAMPLES, ROOT_CHECK_BOX, 0);
        if !(worst <= ROOT_CHECK_TOL) {
            return Err(Error::Config(format!(
                "selected root is inconsistent: max |g(x, h(x,u), u)| = {worst:e}"
            )));
        }
        Ok(spec)
    }

    fn check_epsilon(&self) -> Result<()> {
        if self.epsilon > 0.0 && self.epsilon.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)))
        }
    }

    fn probe_dims(&self) -> Result<()> {
        let x = DVector::zeros(self.nx);
        let z = DVector::zeros(self.nz);
        let u = DVector::zeros(self.nu);
        let checks = [
            ("f output", self.nx, (self.f)(&x, &z, &u).len()),
            ("g output", self.nz, (self.g)(&x, &z, &u).len()),
            ("h output", self.nz, (self.h)(&x, &u).len()),
            ("k output", self.nu, (self.k)(&x).len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        if let Some(j) = &self.dh_dx {
            let m = j(&x, &u);
            if m.shape() != (self.nz, self.nx) {
                return Err(Error::Dimension {
                    what: "dh_dx rows",
                    expected: self.nz,
                    got: m.nrows(),
                });
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        Dims { nx: self.nx, ny: self.nz }
    }

    /// Same plant with another perturbation parameter.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let mut s = self.clone();
        s.epsilon = epsilon;
        s.check_epsilon()?;
        if let Some(l) = &mut s.linear {
            l.epsilon = epsilon;
        }
        Ok(s)
    }

    /// Linear data when the plant was built from [`LinearPlantSpec`].
    pub fn linear(&self) -> Option<&LinearPlantSpec> {
        self.linear.as_ref()
    }

    pub fn f(&self, x: &DVector<f64>, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.f)(x, z, u)
    }

    pub fn g(&self, x: &DVector<f64>, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.g)(x, z, u)
    }

    pub fn h(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.h)(x, u)
    }

    pub fn k(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.k)(x)
    }

    /// Jacobian of `h` in `x` at fixed `u`; central differences when no analytic form is given.
    pub fn dh_dx(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        if let Some(j) = &self.dh_dx {
            return j(x, u);
        }
        let mut jac = DMatrix::zeros(self.nz, self.nx);
        let mut xp = x.clone();
        for i in 0..self.nx {
            let step = 1e-6 * (1.0 + x[i].abs());
            xp[i] = x[i] + step;
            let hp = self.h(&xp, u);
            xp[i] = x[i] - step;
            let hm = self.h(&xp, u);
            xp[i] = x[i];
            jac.set_column(i, &((hp - hm) / (2.0 * step)));
        }
        jac
    }

    /// Held input `u = k(x + e)`.
    pub fn held_input(&self, x: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        self.k(&(x + e))
    }

    /// `y = z - h(x, u)`.
    pub fn shift_coordinates(&self, z: &DVector<f64>, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len("slow state x", self.nx, x.len())?;
        self.check_len("fast state z", self.nz, z.len())?;
        self.check_len("input u", self.nu, u.len())?;
        Ok(z - self.h(x, u))
    }

    /// Physical fast state `z = y + h(x, k(x + e))`.
    pub fn reconstruct_z(&self, x: &DVector<f64>, y: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        y + self.h(x, &self.held_input(x, e))
    }

    fn check_len(&self, what: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::Dimension { what, expected, got })
        }
    }

    /// `f_x(x, y, e) = f(x, y + h(x, u), u)` with `u = k(x + e)`.
    pub fn f_x(&self, x: &DVector<f64>, y: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        let u = self.held_input(x, e);
        let z = y + self.h(x, &u);
        self.f(x, &z, &u)
    }

    /// Derivative of `(x, y, e)` along flows; the clock rate is handled by the caller.
    pub fn closed_loop_flow(&self, x: &DVector<f64>, y: &DVector<f64>, e: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.held_input(x, e);
        let z = y + self.h(x, &u);
        let fx = self.f(x, &z, &u);
        let gz = self.g(x, &z, &u);
        let dy = (gz - self.epsilon * (self.dh_dx(x, &u) * &fx)) / self.epsilon;
        let mut w = DVector::zeros(2 * self.nx + self.nz);
        w.rows_mut(0, self.nx).copy_from(&fx);
        w.rows_mut(self.nx, self.nz).copy_from(&dy);
        w.rows_mut(self.nx + self.nz, self.nx).copy_from(&(-fx));
        if !all_finite(&w) {
            return Err(Error::Divergence("non-finite closed-loop derivative".into()));
        }
        Ok(w)
    }

    /// Flow derivative of a hybrid state.
    pub fn closed_loop_flow_q(&self, q: &HybridState) -> Result<DVector<f64>> {
        self.closed_loop_flow(&q.x, &q.y, &q.e)
    }

    /// `y+ = y + h(x, k(x + e)) - h(x, k(x))`.
    pub fn jump_map_hy(&self, x: &DVector<f64>, y: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        y + self.h(x, &self.held_input(x, e)) - self.h(x, &self.k(x))
    }

    /// Transmission: `x` kept, `y` through `h_y`, `e` and the clock reset.
    pub fn jump_map(&self, q: &HybridState) -> HybridState {
        HybridState {
            x: q.x.clone(),
            y: self.jump_map_hy(&q.x, &q.y, &q.e),
            e: DVector::zeros(self.nx),
            tau: q.tau.map(|_| 0.0),
        }
    }

    /// Slow model `f_s(x, e) = f(x, h(x, u), u)`.
    pub fn reduced_slow_flow(&self, x: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        let u = self.held_input(x, e);
        self.f(x, &self.h(x, &u), &u)
    }

    /// Boundary-layer model `g_f(x, y, e) = g(x, y + h(x, u), u)`.
    pub fn reduced_fast_flow(&self, x: &DVector<f64>, y: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        let u = self.held_input(x, e);
        self.g(x, &(y + self.h(x, &u)), &u)
    }

    /// Max of `|g(x, h(x, u), u)|` over random `(x, u)` in a box.
    pub fn root_residual(&self, n_samples: usize, half_width: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        for _ in 0..n_samples {
            let x = DVector::from_fn(self.nx, |_, _| rng.gen_range(-half_width..=half_width));
            let u = DVector::from_fn(self.nu, |_, _| rng.gen_range(-half_width..=half_width));
            let r = self.g(&x, &self.h(&x, &u), &u).norm();
            worst = if r.is_nan() { f64::INFINITY } else { worst.max(r) };
        }
        worst
    }
}

/// Linear two-time-scale plant `x' = A11 x + A12 z + B1 u`, `eps z' = A21 x + A22 z + B2 u`
/// with `u = K x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPlantSpec {
    #[serde(with = "linalg::rows")]
    pub a11: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub a12: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub a21: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub a22: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub b1: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub b2: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub k_gain: DMatrix<f64>,
    pub epsilon: f64,
}

/// Matrices derived once from [`LinearPlantSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearReduction {
    /// `h(x, u) = hx x + hu u`
    pub hx: DMatrix<f64>,
    pub hu: DMatrix<f64>,
    /// Slow model `x' = a0 x + b0 u`
    pub a0: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub a22_hurwitz: bool,
}

impl LinearPlantSpec {
    pub fn nx(&self) -> usize {
        self.a11.nrows()
    }

    pub fn nz(&self) -> usize {
        self.a22.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b1.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, nz, nu) = (self.nx(), self.nz(), self.nu());
        let shapes = [
            ("a11", self.a11.shape(), (nx, nx)),
            ("a12", self.a12.shape(), (nx, nz)),
            ("a21", self.a21.shape(), (nz, nx)),
            ("a22", self.a22.shape(), (nz, nz)),
            ("b1", self.b1.shape(), (nx, nu)),
            ("b2", self.b2.shape(), (nz, nu)),
            ("k_gain", self.k_gain.shape(), (nu, nx)),
        ];
        for (what, got, expected) in shapes {
            if got != expected {
                let (what, e, g) = if got.0 != expected.0 {
                    (what, expected.0, got.0)
                } else {
                    (what, expected.1, got.1)
                };
                return Err(Error::Dimension { what, expected: e, got: g });
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn reduction(&self) -> Result<LinearReduction> {
        self.validate()?;
        let inv = self
            .a22
            .clone()
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Config("A22 is singular".into()))?;
        let hx = -(&inv * &self.a21);
        let hu = -(&inv * &self.b2);
        let a0 = &self.a11 + &self.a12 * &hx;
        let b0 = &self.b1 + &self.a12 * &hu;
        let a22_hurwitz = self.a22.clone().complex_eigenvalues().iter().all(|l| l.re < 0.0);
        Ok(LinearReduction {
            hx,
            hu,
            a0,
            b0,
            a22_hurwitz,
        })
    }

    /// Matrix of the closed-loop flow acting on `(x, y, e)`.
    pub fn closed_loop_matrix(&self) -> Result<DMatrix<f64>> {
        let r = self.reduction()?;
        let (nx, nz) = (self.nx(), self.nz());
        let n = 2 * nx + nz;
        let bk = &r.b0 * &self.k_gain;
        // x' = (a0 + bk) x + a12 y + bk e
        let mut ax = DMatrix::zeros(nx, n);
        ax.view_mut((0, 0), (nx, nx)).copy_from(&(&r.a0 + &bk));
        ax.view_mut((0, nx), (nx, nz)).copy_from(&self.a12);
        ax.view_mut((0, nx + nz), (nx, nx)).copy_from(&bk);
        // y' = a22 y / eps - hx x'
        let mut ay = -(&r.hx * &ax);
        let mut fast = ay.view_mut((0, nx), (nz, nz));
        fast += &self.a22 / self.epsilon;
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (nx, n)).copy_from(&ax);
        m.view_mut((nx, 0), (nz, n)).copy_from(&ay);
        m.view_mut((nx + nz, 0), (nx, n)).copy_from(&(-ax));
        Ok(m)
    }

    /// Closure-based plant backed by these matrices.
    pub fn to_plant(&self) -> Result<PlantSpec> {
        let r = self.reduction()?;
        let (a11, a12, b1) = (self.a11.clone(), self.a12.clone(), self.b1.clone());
        let (a21, a22, b2) = (self.a21.clone(), self.a22.clone(), self.b2.clone());
        let (hx, hu, hx_j) = (r.hx.clone(), r.hu.clone(), r.hx.clone());
        let kg = self.k_gain.clone();
        let mut spec = PlantSpec::new(
            self.nx(),
            self.nz(),
            self.nu(),
            self.epsilon,
            Arc::new(move |x, z, u| &a11 * x + &a12 * z + &b1 * u),
            Arc::new(move |x, z, u| &a21 * x + &a22 * z + &b2 * u),
            Arc::new(move |x, u| &hx * x + &hu * u),
            Arc::new(move |x| &kg * x),
            Some(Arc::new(move |_, _| hx_j.clone())),
        )?;
        spec.linear = Some(self.clone());
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}
