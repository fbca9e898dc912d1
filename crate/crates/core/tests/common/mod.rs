//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use std::fs::File;
use std::io::BufReader;

use lagshape_core::cartpend::{CartPendParams, Experiment};
use lagshape_core::RbfInertiaModel;

/// An eleven-center model fitted once by an independent prototype and frozen
/// to disk; the values asserted against it come from that prototype.
pub fn reference_model() -> RbfInertiaModel {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/data/reference_model.rbf"
    );
    RbfInertiaModel::load(BufReader::new(
        File::open(path).expect("reference model present"),
    ))
    .unwrap()
}

pub fn reference_experiment() -> Experiment {
    Experiment::with_model(&CartPendParams::default(), reference_model()).unwrap()
}

/// `|a − b| ≤ tol·max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
