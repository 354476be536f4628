//! Simulation and certification of event-triggered control for nonlinear
//! singularly perturbed systems.
//!
//! The closed loop is a hybrid system with state `q = (x, y, e, tau)`: the slow
//! state `x`, the fast state shifted to its quasi-steady state `y = z - h(x, u)`,
//! the sampling-induced error `e` and an optional clock `tau`. Transmissions are
//! jumps that reset `e` and move `y` so that the physical fast state `z` stays
//! continuous.
//!
//! Modules:
//! - [`hybrid`]: hybrid time, states, arcs and their CSV/JSON serialization.
//! - [`plant`]: plant data, closed-loop flow and jump maps, reduced models.
//! - [`trigger`]: naive, dead-zone, time-regularized and periodic triggers.
//! - [`certificate`]: constants from quadratic Lyapunov data, dwell-time bound,
//!   analysis parameters and the singular-perturbation bound.
//! - [`simulator`]: hybrid integration with event localization and monitors.
//! - [`analysis`]: inter-event times, practical balls, envelopes, sweeps.
//! - [`scenario`] and [`demo`]: JSON configuration and the shipped linear demo.

pub mod analysis;
pub mod certificate;
pub mod demo;
pub mod error;
pub mod hybrid;
pub mod linalg;
pub mod ode;
pub mod plant;
pub mod scenario;
pub mod simulator;
pub mod trigger;

pub use error::{Error, Result};
