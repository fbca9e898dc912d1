//! Approximate energy shaping for underactuated Euler-Lagrange systems.
//!
//! The potential matching condition is imposed exactly at a set of centers
//! and blended in between with Gaussian radial basis functions; the resulting
//! controlled inertia `M̂_c(q)` drives an energy-shaping plus damping-injection
//! controller whose closed loop is simulated and checked with Lyapunov-type
//! diagnostics.
//!
//! Module map:
//! - [`system`]: the plant `M(q)q̈ + C(q,q̇)q̇ + ∇V = G u`.
//! - [`matching`]: matching residuals and the center consistency check.
//! - [`rbf`], [`fit`], [`lm`]: the blended inertia model and its fit.
//! - [`controller`]: gyroscopic/dissipative forces and the control law.
//! - [`sim`], [`stability`]: RK4 runs and energy diagnostics.
//! - [`cartpend`]: the cart-pendulum instance.

// Validation uses `!(x > 0.0)`-style tests on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cartpend;
pub mod controller;
pub mod error;
pub mod fit;
pub mod inertia;
pub mod linalg;
pub mod lm;
pub mod matching;
pub mod potential;
pub mod rbf;
pub mod sim;
pub mod stability;
pub mod system;
pub mod table;

pub use controller::{
    ControllerSpec, DampingGain, Dissipation, Gains, KineticTerms, MinTraceCompletion,
};
pub use error::{Error, Result};
pub use fit::{FitConfig, FitOutcome, GridAxis, SampleGrid};
pub use inertia::{ControlledInertia, ExactInertia};
pub use matching::{CenterSet, Lemma1Report, MatchingReport};
pub use potential::{ControlledPotential, FnPotential};
pub use rbf::RbfInertiaModel;
pub use sim::{SimConfig, StateTrajectory, TrajectoryRow};
pub use stability::{HcDot, LyapunovScan, ScanGrid};
pub use system::{ElSystem, State, Workspace};

pub use nalgebra::{DMatrix, DVector};
