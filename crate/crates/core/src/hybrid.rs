//! Hybrid time domains, hybrid states and hybrid arcs.
//!
//! An arc is a list of samples indexed by hybrid time `(t, j)` in lexicographic
//! order. Flow samples keep `j` and advance `t`; a jump keeps `t` and advances
//! `j` by one. Every jump is also recorded in an event log with its pre- and
//! post-jump state.

use std::cmp::Ordering;
use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A point `(t, j)` of a hybrid time domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridTime {
    pub t: f64,
    pub j: usize,
}

impl HybridTime {
    pub fn new(t: f64, j: usize) -> Self {
        Self { t, j }
    }

    /// Abscissa `t + j` used by the stability estimates.
    pub fn hybrid_abscissa(&self) -> f64 {
        self.t + self.j as f64
    }
}

impl PartialOrd for HybridTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.t.partial_cmp(&other.t)? {
            Ordering::Equal => Some(self.j.cmp(&other.j)),
            o => Some(o),
        }
    }
}

/// Dimensions `(n_x, n_y)` of a closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
}

/// The closed-loop state `q = (x, y, e, tau)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridState {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub e: DVector<f64>,
    pub tau: Option<f64>,
}

impl HybridState {
    pub fn new(x: DVector<f64>, y: DVector<f64>, e: DVector<f64>, tau: Option<f64>) -> Result<Self> {
        if e.len() != x.len() {
            return Err(Error::Dimension {
                what: "sampling error e",
                expected: x.len(),
                got: e.len(),
            });
        }
        let q = Self { x, y, e, tau };
        q.check_finite()?;
        Ok(q)
    }

    pub fn zeros(dims: Dims, clock: bool) -> Self {
        Self {
            x: DVector::zeros(dims.nx),
            y: DVector::zeros(dims.ny),
            e: DVector::zeros(dims.nx),
            tau: clock.then_some(0.0),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            nx: self.x.len(),
            ny: self.y.len(),
        }
    }

    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        for (what, expected, got) in [
            ("slow state x", dims.nx, self.x.len()),
            ("fast state y", dims.ny, self.y.len()),
            ("sampling error e", dims.nx, self.e.len()),
        ] {
            if expected != got {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        let ok = self.x.iter().chain(self.y.iter()).chain(self.e.iter()).all(|v| v.is_finite())
            && self.tau.map_or(true, f64::is_finite);
        if ok {
            Ok(())
        } else {
            Err(Error::Divergence("non-finite state entry".into()))
        }
    }

    /// Continuous part `(x, y, e)` stacked into one vector.
    pub fn flat(&self) -> DVector<f64> {
        let d = self.dims();
        let mut w = DVector::zeros(2 * d.nx + d.ny);
        w.rows_mut(0, d.nx).copy_from(&self.x);
        w.rows_mut(d.nx, d.ny).copy_from(&self.y);
        w.rows_mut(d.nx + d.ny, d.nx).copy_from(&self.e);
        w
    }

    pub fn from_flat(w: &DVector<f64>, dims: Dims, tau: Option<f64>) -> Self {
        Self {
            x: w.rows(0, dims.nx).into_owned(),
            y: w.rows(dims.nx, dims.ny).into_owned(),
            e: w.rows(dims.nx + dims.ny, dims.nx).into_owned(),
            tau,
        }
    }

    /// `|(x, y)|`
    pub fn xy_norm(&self) -> f64 {
        (self.x.norm_squared() + self.y.norm_squared()).sqrt()
    }

    /// `|(x, y, e)|`
    pub fn xye_norm(&self) -> f64 {
        (self.x.norm_squared() + self.y.norm_squared() + self.e.norm_squared()).sqrt()
    }
}

/// Values observed by the integrator at a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorValues {
    pub v: Option<f64>,
    pub r: Option<f64>,
    pub trigger_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: HybridTime,
    pub state: HybridState,
    pub monitors: MonitorValues,
    /// True when this sample was reached by a jump.
    pub is_jump: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpReason {
    /// State-dependent triggering condition met.
    Threshold,
    /// Dwell clock reached with the threshold already exceeded.
    ClockExpired,
    /// Periodic schedule.
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub t: f64,
    /// Jump counter after the jump.
    pub j: usize,
    pub pre: HybridState,
    pub post: HybridState,
    pub reason: JumpReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    HorizonReached,
    ZenoGuard,
    Divergence,
    FlowSetExit,
}

/// A solution record over a compact hybrid time domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridArc {
    pub dims: Dims,
    pub samples: Vec<Sample>,
    pub events: Vec<JumpRecord>,
    pub termination: Option<Termination>,
}

impl HybridArc {
    pub fn new(dims: Dims) -> Self {
        Self {
            dims,
            samples: Vec::new(),
            events: Vec::new(),
            termination: None,
        }
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn jump_count(&self) -> usize {
        self.events.len()
    }

    /// Continuous time at the end of the arc.
    pub fn end_time(&self) -> f64 {
        self.last().map_or(0.0, |s| s.time.t)
    }

    /// Appends a flow sample at the current jump counter.
    pub fn append_flow_sample(&mut self, t: f64, q: HybridState, monitors: MonitorValues) -> Result<()> {
        q.check_dims(self.dims)?;
        let j = self.last().map_or(0, |s| s.time.j);
        if let Some(last) = self.last() {
            if !(t >= last.time.t) {
                return Err(Error::Ordering {
                    t,
                    j,
                    last_t: last.time.t,
                    last_j: last.time.j,
                });
            }
        }
        self.samples.push(Sample {
            time: HybridTime::new(t, j),
            state: q,
            monitors,
            is_jump: false,
        });
        Ok(())
    }

    /// Appends the post-jump sample `(t, j + 1)` and records the event.
    ///
    /// `q_pre` must be the state of the last sample.
    pub fn append_jump(
        &mut self,
        q_pre: &HybridState,
        q_post: HybridState,
        monitors: MonitorValues,
        reason: JumpReason,
    ) -> Result<()> {
        q_post.check_dims(self.dims)?;
        let last = self
            .last()
            .ok_or_else(|| Error::Config("jump on an empty arc".into()))?;
        if &last.state != q_pre {
            return Err(Error::Config("pre-jump state differs from the last sample".into()));
        }
        let time = HybridTime::new(last.time.t, last.time.j + 1);
        self.events.push(JumpRecord {
            t: time.t,
            j: time.j,
            pre: q_pre.clone(),
            post: q_post.clone(),
            reason,
        });
        self.samples.push(Sample {
            time,
            state: q_post,
            monitors,
            is_jump: true,
        });
        Ok(())
    }

    /// Times of all jumps in order.
    pub fn jump_times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.t).collect()
    }

    /// Checks lexicographic order and the flow/jump structure of the samples.
    pub fn check_ordering(&self) -> Result<()> {
        for w in self.samples.windows(2) {
            let (a, b) = (&w[0].time, &w[1].time);
            let ok = if b.j == a.j {
                b.t >= a.t
            } else {
                b.j == a.j + 1 && b.t == a.t && w[1].is_jump
            };
            if !ok {
                return Err(Error::Ordering {
                    t: b.t,
                    j: b.j,
                    last_t: a.t,
                    last_j: a.j,
                });
            }
        }
        Ok(())
    }

    /// CSV with columns `t, j, x_*, y_*, e_*, tau, V, R, trigger_margin, is_jump`.
    pub fn to_csv(&self) -> String {
        let Dims { nx, ny } = self.dims;
        let mut out = String::from("t,j");
        for (name, n) in [("x", nx), ("y", ny), ("e", nx)] {
            for i in 1..=n {
                let _ = write!(out, ",{name}_{i}");
            }
        }
        out.push_str(",tau,V,R,trigger_margin,is_jump\n");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for s in &self.samples {
            let _ = write!(out, "{},{}", s.time.t, s.time.j);
            for v in s.state.x.iter().chain(s.state.y.iter()).chain(s.state.e.iter()) {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(
                out,
                ",{},{},{},{},{}",
                opt(s.state.tau),
                opt(s.monitors.v),
                opt(s.monitors.r),
                s.monitors.trigger_margin,
                u8::from(s.is_jump)
            );
        }
        out
    }

    /// JSON event log: one entry per jump with `time, j, reason, e_norm`.
    pub fn event_log_json(&self) -> serde_json::Value {
        let events: Vec<_> = self
            .events
            .iter()
            .map(|ev| {
                serde_json::json!({
                    "time": ev.t,
                    "j": ev.j,
                    "reason": ev.reason,
                    "e_norm": ev.pre.e.norm(),
                })
            })
            .collect();
        serde_json::Value::Array(events)
    }
}

/// Flow/jump description of a hybrid system `q' = F(q)` on `C`, `q+ = G(q)` on `D`.
pub trait HybridSystem {
    fn dims(&self) -> Dims;

    /// Derivative of the continuous part `(x, y, e)`; the clock, when present, has rate 1.
    fn flow_map(&self, q: &HybridState) -> Result<DVector<f64>>;

    fn jump_map(&self, q: &HybridState) -> HybridState;

    fn in_flow_set(&self, q: &HybridState) -> bool;

    fn in_jump_set(&self, q: &HybridState) -> bool;

    /// Negative strictly inside `C \ D`, zero on the boundary of `D`.
    fn event_function(&self, q: &HybridState) -> f64;
}
