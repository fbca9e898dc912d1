//! Closed-loop runs: accuracy, determinism and batch consistency.

mod common;

use lagshape_core::sim::{self, SimConfig};
use lagshape_core::stability::{self, ScanGrid};
use lagshape_core::{Error, State};

use common::reference_experiment;

fn config(initial: State, t_end: f64, dt: f64, stride: usize) -> SimConfig {
    SimConfig {
        t_end,
        dt,
        initial,
        stride,
    }
}

#[test]
fn closed_loop_local_error_has_fifth_order_ratio() {
    let exp = reference_experiment();
    let spec = Some(&exp.controller);
    let x = State::from_slices(&[0.5, 0.3], &[0.2, -0.4]);
    let local = |h: f64| {
        let full = sim::step(&exp.system, spec, &x, h).unwrap();
        let half = sim::step(&exp.system, spec, &x, h / 2.0).unwrap();
        let two = sim::step(&exp.system, spec, &half, h / 2.0).unwrap();
        ((&full.q - &two.q).norm_squared() + (&full.qd - &two.qd).norm_squared()).sqrt()
    };
    let ratio = local(0.1) / local(0.05);
    assert!((25.0..=40.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn repeated_runs_are_bit_identical() {
    let exp = reference_experiment();
    let cfg = config(State::from_slices(&[0.3, 1.0], &[0.0, 0.0]), 2.0, 1e-3, 10);
    let a = sim::run(&exp.system, Some(&exp.controller), &cfg).unwrap();
    let b = sim::run(&exp.system, Some(&exp.controller), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(&[]), b.to_csv(&[]));
}

#[test]
fn batch_runs_equal_sequential_runs() {
    let exp = reference_experiment();
    let cfgs: Vec<_> = [(0.5, 0.0), (-0.5, 0.0), (0.3, 1.0)]
        .into_iter()
        .map(|(q1, q2)| config(State::from_slices(&[q1, q2], &[0.0, 0.0]), 1.0, 1e-3, 25))
        .collect();
    let batch = sim::run_many(&exp.system, Some(&exp.controller), &cfgs).unwrap();
    for (cfg, tr) in cfgs.iter().zip(&batch) {
        assert_eq!(
            &sim::run(&exp.system, Some(&exp.controller), cfg).unwrap(),
            tr
        );
    }
}

#[test]
fn stride_records_every_kth_step_and_the_last() {
    let exp = reference_experiment();
    let cfg = config(
        State::from_slices(&[0.5, 0.0], &[0.0, 0.0]),
        0.105,
        1e-3,
        10,
    );
    let tr = sim::run(&exp.system, Some(&exp.controller), &cfg).unwrap();
    let times: Vec<f64> = tr.rows.iter().map(|r| (r.t * 1e3).round()).collect();
    assert_eq!(
        times,
        vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0, 105.0]
    );
}

#[test]
fn energy_rate_columns_are_consistent() {
    let exp = reference_experiment();
    let cfg = config(State::from_slices(&[0.5, 0.0], &[0.0, 0.0]), 1.0, 1e-3, 50);
    let tr = sim::run(&exp.system, Some(&exp.controller), &cfg).unwrap();
    for row in &tr.rows {
        assert_eq!(row.hc_dot, row.p_dot + row.eps);
    }
}

#[test]
fn closed_loop_energy_decreases_over_a_run() {
    let exp = reference_experiment();
    let cfg = config(
        State::from_slices(&[-0.5, 0.0], &[0.0, 0.0]),
        10.0,
        1e-3,
        100,
    );
    let tr = sim::run(&exp.system, Some(&exp.controller), &cfg).unwrap();
    let first = tr.rows.first().unwrap().hc;
    let last = tr.last().unwrap().hc;
    assert!(last < first, "H_c {first} -> {last}");
    let integral = stability::error_path_integral(&tr).unwrap();
    assert!(integral.bound.is_finite());
    assert_eq!(integral.envelope.len(), tr.rows.len());
}

#[test]
fn invalid_configurations_are_rejected() {
    let exp = reference_experiment();
    let x = State::from_slices(&[0.1, 0.0], &[0.0, 0.0]);
    for cfg in [
        config(x.clone(), 1.0, 0.0, 1),
        config(x.clone(), 1.0, 1e-3, 0),
        config(x, -1.0, 1e-3, 1),
    ] {
        assert!(matches!(
            sim::run(&exp.system, Some(&exp.controller), &cfg),
            Err(Error::Config(_))
        ));
    }
}

#[test]
fn scan_rejects_too_short_trajectories() {
    let exp = reference_experiment();
    let cfg = config(State::from_slices(&[0.1, 0.0], &[0.0, 0.0]), 2e-3, 1e-3, 1);
    let tr = sim::run(&exp.system, Some(&exp.controller), &cfg).unwrap();
    let res = stability::lagrange_scan(&tr, &exp.equilibrium(), &ScanGrid::default(), 0.05);
    assert!(matches!(res, Err(Error::TooShort { .. })));
}
