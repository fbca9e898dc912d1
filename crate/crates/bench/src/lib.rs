//! Shared fixtures for the benchmarks.

use lagshape_core::cartpend::{self, CartPendParams, Experiment};
use lagshape_core::State;

/// The default eleven-center design, fitted once.
pub fn default_experiment() -> Experiment {
    cartpend::default_experiment(&CartPendParams::default()).expect("default design fits")
}

/// A representative state inside the workspace with nonzero velocity.
pub fn probe_state() -> State {
    State::from_slices(&[0.4, 0.3], &[0.2, -0.1])
}
