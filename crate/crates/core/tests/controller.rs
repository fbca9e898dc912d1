//! Control law, gyroscopic/dissipative forces and the energy balance.

mod common;

use lagshape_core::cartpend::{CartPendParams, Experiment};
use lagshape_core::matching::{dissipation_residual, ke_residual, ke_residual_expanded};
use lagshape_core::stability::{self, hc, hc_dot, hc_dot_chain};
use lagshape_core::{DVector, State};
use proptest::prelude::*;

use common::{close, reference_experiment, reference_model};

fn probe() -> State {
    State::from_slices(&[0.4, 0.3], &[0.2, -0.1])
}

#[test]
fn control_matches_independent_evaluation() {
    let exp = reference_experiment();
    let b = exp.controller.breakdown(&probe()).unwrap();
    assert!(close(b.u[0], 68.4449504067203, 1e-11), "u = {}", b.u[0]);
    assert!(
        close(b.u_c[0], 45.67326480698449, 1e-11),
        "u_c = {}",
        b.u_c[0]
    );
    assert!(
        close(b.u_d[0], 22.771685599735807, 1e-11),
        "u_d = {}",
        b.u_d[0]
    );
}

#[test]
fn interconnection_matrices_match_independent_evaluation() {
    let exp = reference_experiment();
    let s = probe();
    let j = exp.controller.gyroscopic(&s).unwrap();
    assert!(close(j[(0, 1)], 0.07518024415243975, 1e-11));
    assert_eq!(j[(0, 0)], 0.0);
    assert_eq!(j[(0, 1)], -j[(1, 0)]);
    let r = exp.controller.dissipative(&s).unwrap();
    let expected = [
        0.03253743709842394,
        0.07650934509816454,
        0.07650934509816454,
        0.03365909757717634,
    ];
    for (a, b) in r.as_slice().iter().zip(expected) {
        assert!(close(*a, b, 1e-10), "{a} vs {b}");
    }
    assert_eq!(r[(0, 1)], r[(1, 0)]);
}

#[test]
fn energy_balance_matches_independent_evaluation() {
    let exp = reference_experiment();
    let s = probe();
    assert!(close(hc(&exp.controller, &s), -3.4073363018427267, 1e-12));
    let d = hc_dot(&exp.controller, &s).unwrap();
    assert!(
        close(d.p_dot, -0.7393629504460895, 1e-10),
        "Ṗ = {}",
        d.p_dot
    );
    assert!(close(d.eps, -0.007880092174223426, 1e-10), "ε = {}", d.eps);
    assert_eq!(d.total, d.p_dot + d.eps);
    let ebar = stability::eps_bar(&exp.controller, &s.q).unwrap();
    assert!(
        close(ebar[0], 0.02666945039036772, 1e-10),
        "ε̄ = {}",
        ebar[0]
    );
}

#[test]
fn control_vanishes_at_the_equilibrium() {
    let exp = reference_experiment();
    let u = exp
        .controller
        .control(&State::at_rest(exp.equilibrium()))
        .unwrap();
    assert_eq!(u[0], 0.0);
}

#[test]
fn equilibrium_energy_is_the_potential_minimum() {
    let exp = reference_experiment();
    let p = &exp.params;
    let value = hc(&exp.controller, &State::at_rest(exp.equilibrium()));
    assert!(close(value, p.a / p.s11(), 1e-14));
    assert!(close(value, -3.786428, 1e-6));
}

#[test]
fn dissipation_residual_does_not_depend_on_phi() {
    let s = probe();
    let mut maxima = Vec::new();
    for phi in [0.0, 0.002, 1.0] {
        let p = CartPendParams {
            phi,
            ..CartPendParams::default()
        };
        let exp = Experiment::with_model(&p, reference_model()).unwrap();
        let r = exp.controller.dissipative(&s).unwrap();
        let res = dissipation_residual(&exp.system, exp.controller.inertia(), &r, &s).unwrap();
        maxima.push(res.amax());
    }
    assert!(maxima.iter().all(|&m| m < 1e-13), "{maxima:?}");
}

#[test]
fn damping_is_proportional_to_the_gain() {
    let s = probe();
    let damping = |kv: f64| {
        let p = CartPendParams {
            kv,
            ..CartPendParams::default()
        };
        Experiment::with_model(&p, reference_model())
            .unwrap()
            .controller
            .damping_control(&s)
            .unwrap()[0]
    };
    assert!(close(damping(1400.0), 2.0 * damping(700.0), 1e-14));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kinetic_residual_vanishes_in_both_forms(
        q1 in -1.309f64..1.309, q2 in -2.0f64..2.0, v1 in -1.0f64..1.0, v2 in -1.0f64..1.0,
    ) {
        let exp = reference_experiment();
        let s = State::from_slices(&[q1, q2], &[v1, v2]);
        let j = exp.controller.gyroscopic(&s).unwrap();
        let r = exp.controller.dissipative(&s).unwrap();
        let mc = exp.controller.inertia();
        prop_assert!(ke_residual(&exp.system, mc, &j, &r, &s).unwrap().amax() < 1e-12);
        prop_assert!(ke_residual_expanded(&exp.system, mc, &j, &r, &s).unwrap().amax() < 1e-10);
    }

    #[test]
    fn chain_rule_rate_matches_decomposition(
        q1 in -1.309f64..1.309, q2 in -2.0f64..2.0, v1 in -1.0f64..1.0, v2 in -1.0f64..1.0,
    ) {
        let exp = reference_experiment();
        let s = State::from_slices(&[q1, q2], &[v1, v2]);
        let u = exp.controller.control(&s).unwrap();
        let qdd = exp.system.open_loop_accel(&s, &u).unwrap();
        let chain = hc_dot_chain(&exp.controller, &s, &qdd);
        let d = hc_dot(&exp.controller, &s).unwrap();
        prop_assert!((chain - d.total).abs() < 1e-11 * d.total.abs().max(1.0), "{} vs {}", chain, d.total);
    }

    #[test]
    fn shaped_potential_gradient_matches_finite_differences(q1 in -1.309f64..1.309, q2 in -2.0f64..2.0) {
        let exp = reference_experiment();
        let pot = exp.controller.potential();
        let q = DVector::from_vec(vec![q1, q2]);
        let g = pot.grad(&q);
        let h = 1e-6;
        for k in 0..2 {
            let mut e = DVector::zeros(2);
            e[k] = h;
            let fd = (pot.value(&(&q + &e)) - pot.value(&(&q - &e))) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() < 1e-7);
        }
    }
}
