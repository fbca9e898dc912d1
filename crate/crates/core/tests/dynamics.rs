//! Plant dynamics: Coriolis construction, energy, and integration accuracy.

use std::f64::consts::FRAC_PI_2;

use lagshape_core::cartpend::{self, CartPendParams};
use lagshape_core::sim::{self, SimConfig};
use lagshape_core::{DMatrix, DVector, State};
use proptest::prelude::*;

fn plant() -> lagshape_core::ElSystem {
    cartpend::build_system(&CartPendParams::default()).unwrap()
}

#[test]
fn coriolis_at_horizontal_pendulum() {
    // q₁ = π/2, q̇ = (1, 1): D = [[−1, 0], [−1, 0]], C = D − ½Dᵀ.
    let c = plant()
        .coriolis(&State::from_slices(&[FRAC_PI_2, 0.0], &[1.0, 1.0]))
        .unwrap();
    let expected = DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, -1.0, 0.0]);
    assert!((c - expected).amax() < 1e-15);
}

#[test]
fn coriolis_vanishes_at_rest() {
    let c = plant()
        .coriolis(&State::from_slices(&[0.7, -0.2], &[0.0, 0.0]))
        .unwrap();
    assert_eq!(c.amax(), 0.0);
}

#[test]
fn upright_rest_energy_is_the_potential_peak() {
    let sys = plant();
    assert_eq!(
        sys.total_energy(&State::from_slices(&[0.0, 0.0], &[0.0, 0.0])),
        9.8
    );
}

#[test]
fn tilted_pendulum_falls_away_from_upright() {
    let sys = plant();
    let u = DVector::zeros(1);
    let right = sys
        .open_loop_accel(&State::from_slices(&[0.1, 0.0], &[0.0, 0.0]), &u)
        .unwrap();
    let left = sys
        .open_loop_accel(&State::from_slices(&[-0.1, 0.0], &[0.0, 0.0]), &u)
        .unwrap();
    assert!(right[0] > 0.0 && left[0] < 0.0);
    // Closed form at rest: q̈₁ = a sin q₁ · c / (c − b² cos² q₁).
    let expected = 9.8 * 0.1f64.sin() * 6.0 / (6.0 - 0.1f64.cos().powi(2));
    assert!((right[0] - expected).abs() < 1e-13);
}

#[test]
fn cart_force_accelerates_cart_forward() {
    let sys = plant();
    let a = sys
        .open_loop_accel(
            &State::from_slices(&[0.0, 0.0], &[0.0, 0.0]),
            &DVector::from_vec(vec![1.0]),
        )
        .unwrap();
    // Upright: M = [[1, 1], [1, 6]], so q̈ = M⁻¹(0, 1) = (−0.2, 0.2).
    assert!((a[0] + 0.2).abs() < 1e-15 && (a[1] - 0.2).abs() < 1e-15);
}

#[test]
fn unforced_motion_conserves_energy() {
    let sys = plant();
    let cfg = SimConfig {
        t_end: 10.0,
        dt: 1e-3,
        initial: State::from_slices(&[1.0, 0.0], &[0.0, 0.5]),
        stride: 50,
    };
    let tr = sim::run(&sys, None, &cfg).unwrap();
    assert!(tr.is_complete());
    let e0 = tr.rows[0].energy;
    for row in &tr.rows {
        assert!(
            (row.energy - e0).abs() < 1e-6,
            "drift {} at t = {}",
            row.energy - e0,
            row.t
        );
    }
}

#[test]
fn rk4_local_error_is_fifth_order() {
    let sys = plant();
    let x = State::from_slices(&[0.9, -0.3], &[0.4, 0.1]);
    let local = |h: f64| {
        let full = sim::step(&sys, None, &x, h).unwrap();
        let half = sim::step(&sys, None, &x, h / 2.0).unwrap();
        let two = sim::step(&sys, None, &half, h / 2.0).unwrap();
        ((&full.q - &two.q).norm_squared() + (&full.qd - &two.qd).norm_squared()).sqrt()
    };
    let ratio = local(0.1) / local(0.05);
    assert!((25.0..=40.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn global_error_is_fourth_order() {
    let sys = plant();
    let x = State::from_slices(&[0.3, 0.0], &[0.0, 0.0]);
    let end = |dt: f64| {
        let tr = sim::run(
            &sys,
            None,
            &SimConfig {
                t_end: 1.0,
                dt,
                initial: x.clone(),
                stride: 1000,
            },
        )
        .unwrap();
        tr.last().unwrap().q[0]
    };
    let (a, b, c) = (end(0.02), end(0.01), end(0.005));
    let ratio = (a - b) / (b - c);
    assert!((14.0..=18.0).contains(&ratio), "ratio {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn coriolis_does_no_work(
        q1 in -1.309f64..1.309, q2 in -2.0f64..2.0, v1 in -2.0f64..2.0, v2 in -2.0f64..2.0,
    ) {
        // q̇ᵀ(Ṁ − 2C)q̇ = 0 with Ṁ from central differences along q̇.
        let sys = plant();
        let s = State::from_slices(&[q1, q2], &[v1, v2]);
        let h = 1e-6;
        let ahead = sys.mass_matrix(&(&s.q + &s.qd * h));
        let behind = sys.mass_matrix(&(&s.q - &s.qd * h));
        let m_dot = (ahead - behind) / (2.0 * h);
        let n = m_dot - sys.coriolis(&s).unwrap() * 2.0;
        prop_assert!(s.qd.dot(&(n * &s.qd)).abs() < 1e-8);
    }

    #[test]
    fn analytic_mass_flow_matches_finite_differences(
        q1 in -1.309f64..1.309, q2 in -2.0f64..2.0, v1 in -2.0f64..2.0, v2 in -2.0f64..2.0,
    ) {
        let sys = plant();
        let q = DVector::from_vec(vec![q1, q2]);
        let qd = DVector::from_vec(vec![v1, v2]);
        prop_assert!((sys.mass_flow(&q, &qd) - sys.mass_flow_fd(&q, &qd)).amax() < 1e-6);
    }
}
