//! Dormand–Prince 5(4) with step-size control and continuous (dense) output.

use nalgebra::DVector;

use crate::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Hairer's 4th-order continuous extension.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Interpolant over one accepted step `[t0, t0 + h]`.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    r1: DVector<f64>,
    r2: DVector<f64>,
    r3: DVector<f64>,
    r4: DVector<f64>,
    r5: DVector<f64>,
}

impl DenseStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        // r1 + th (r2 + th1 (r3 + th (r4 + th1 r5)))
        let inner = &self.r4 + &self.r5 * th1;
        let inner = &self.r3 + inner * th;
        let inner = &self.r2 + inner * th1;
        &self.r1 + inner * th
    }
}

/// Result of one attempted step.
pub struct Attempt {
    pub y1: DVector<f64>,
    /// Derivative at the new point (FSAL).
    pub k7: DVector<f64>,
    /// Scaled RMS error; the step is acceptable when `<= 1`.
    pub err: f64,
    pub dense: DenseStep,
}

#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Dopri5 {
    pub fn new(rel_tol: f64, abs_tol: f64) -> Self {
        Self { rel_tol, abs_tol }
    }

    /// One Dormand–Prince step of size `h` from `(t, y)` with `k1 = f(t, y)`.
    pub fn attempt<F>(&self, f: &F, t: f64, y: &DVector<f64>, k1: &DVector<f64>, h: f64) -> Attempt
    where
        F: Fn(f64, &DVector<f64>) -> DVector<f64>,
    {
        let k2 = f(t + C2 * h, &(y + k1 * (h * A21)));
        let k3 = f(t + C3 * h, &(y + (k1 * A31 + &k2 * A32) * h));
        let k4 = f(t + C4 * h, &(y + (k1 * A41 + &k2 * A42 + &k3 * A43) * h));
        let k5 = f(
            t + C5 * h,
            &(y + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
        );
        let k6 = f(
            t + h,
            &(y + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
        );
        let y1 = y + (k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
        let k7 = f(t + h, &y1);

        let err_vec = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
        let n = y.len().max(1) as f64;
        let sum: f64 = err_vec
            .iter()
            .zip(y.iter().zip(y1.iter()))
            .map(|(e, (a, b))| {
                let sc = self.abs_tol + self.rel_tol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum();
        let err = (sum / n).sqrt();

        let r2 = &y1 - y;
        let r3 = k1 * h - &r2;
        let r4 = &r2 - &k7 * h - &r3;
        let r5 = (k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h;
        let dense = DenseStep {
            t0: t,
            h,
            r1: y.clone(),
            r2,
            r3,
            r4,
            r5,
        };
        Attempt { y1, k7, err, dense }
    }

    /// Step-size factor from an error estimate.
    pub fn rescale(err: f64) -> f64 {
        if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        }
    }

    /// Initial step guess (Hairer's heuristic, first stage only).
    pub fn initial_step(&self, y: &DVector<f64>, k1: &DVector<f64>, h_max: f64) -> f64 {
        let sc = |v: f64| self.abs_tol + self.rel_tol * v.abs();
        let n = y.len().max(1) as f64;
        let d0 = (y.iter().map(|v| (v / sc(*v)).powi(2)).sum::<f64>() / n).sqrt();
        let d1 = (k1
            .iter()
            .zip(y.iter())
            .map(|(k, v)| (k / sc(*v)).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h.min(h_max)
    }
}

/// Integrates `y' = f(t, y)` from `t0` until `stop(y) <= 0` (sign change from positive)
/// or `t_max`, keeping every dense step.
pub fn integrate_until<F, G>(
    solver: &Dopri5,
    f: F,
    t0: f64,
    y0: DVector<f64>,
    t_max: f64,
    max_step: f64,
    stop: G,
    root_tol: f64,
) -> Result<(f64, Vec<DenseStep>)>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> f64,
{
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut h = solver.initial_step(&y, &k1, max_step);
    let mut steps = Vec::new();
    let mut rejects = 0usize;
    while t < t_max {
        h = h.min(max_step).min(t_max - t);
        let att = solver.attempt(&f, t, &y, &k1, h);
        if !att.err.is_finite() || att.err > 1.0 {
            h *= Dopri5::rescale(att.err.min(1e10)).min(0.9);
            rejects += 1;
            if h < 1e-14 * (1.0 + t.abs()) || rejects > 100_000 {
                return Err(Error::Integration(format!("step size underflow at t = {t}")));
            }
            continue;
        }
        let g1 = stop(&att.y1);
        if g1 <= 0.0 {
            // bisection on the interpolant
            let (mut lo, mut hi) = (t, t + h);
            while hi - lo > root_tol {
                let mid = 0.5 * (lo + hi);
                if stop(&att.dense.eval(mid)) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            steps.push(att.dense);
            return Ok((hi, steps));
        }
        t += h;
        h *= Dopri5::rescale(att.err);
        y = att.y1;
        k1 = att.k7;
        steps.push(att.dense);
    }
    Err(Error::Integration(format!(
        "stopping condition not reached before t = {t_max}"
    )))
}
