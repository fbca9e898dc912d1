//! Blended inertia model: evaluation, derivatives, persistence and fitting.

mod common;

use lagshape_core::cartpend::{self, CartPendParams, CartPendPotential};
use lagshape_core::fit::{self, FitConfig, GridAxis, SampleGrid};
use lagshape_core::matching::CenterSet;
use lagshape_core::{
    ControlledInertia, ControlledPotential, DMatrix, DVector, ElSystem, Error, RbfInertiaModel,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{close, reference_model};

#[test]
fn reference_model_reproduces_independent_evaluation() {
    let mc = reference_model().evaluate(&DVector::from_vec(vec![0.4, 0.3]));
    let expected = [
        1.5743084784398618,
        0.4935209968187906,
        0.4935209968187906,
        0.21741777989519762,
    ];
    for (a, b) in mc.as_slice().iter().zip(expected) {
        assert!(close(*a, b, 1e-13), "{a} vs {b}");
    }
}

#[test]
fn fitted_model_stays_close_to_every_center_inertia() {
    let p = CartPendParams::default();
    let exp = cartpend::default_experiment(&p).unwrap();
    let mut worst = 0.0f64;
    for (q, mc) in exp.centers.centers().iter().zip(exp.centers.controlled()) {
        worst = worst.max((exp.model.evaluate(q) - mc).amax() / mc.amax());
    }
    assert!(worst < 0.02, "relative deviation {worst}");
}

#[test]
fn model_depends_only_on_active_coordinates() {
    let model = reference_model();
    let a = model.evaluate(&DVector::from_vec(vec![0.2, -1.5]));
    let b = model.evaluate(&DVector::from_vec(vec![0.2, 1.5]));
    assert_eq!(a, b);
}

#[test]
fn analytic_flow_matches_finite_differences_on_random_states() {
    let model = reference_model();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let q = DVector::from_vec(vec![
            rng.random_range(-1.309..1.309),
            rng.random_range(-2.0..2.0),
        ]);
        let qd = DVector::from_vec(vec![
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]);
        let h = 1e-6;
        let mut fd = DMatrix::zeros(2, 2);
        for j in 0..2 {
            let mut e = DVector::zeros(2);
            e[j] = h;
            let col =
                (model.evaluate(&(&q + &e)) * &qd - model.evaluate(&(&q - &e)) * &qd) / (2.0 * h);
            fd.set_column(j, &col);
        }
        let analytic = model.mass_flow(&q, &qd);
        assert!((analytic - &fd).amax() < 1e-7, "flow mismatch at {q}");
    }
}

#[test]
fn corrupted_documents_are_rejected_with_line_numbers() {
    let text = reference_model().to_text();
    let truncated: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
    assert!(matches!(
        RbfInertiaModel::from_text(&truncated),
        Err(Error::Parse { .. })
    ));
    let garbled = text.replacen("width 1.7610733858505183", "width nonsense", 1);
    match RbfInertiaModel::from_text(&garbled) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
        other => panic!("expected a parse error, got {other:?}"),
    }
    let negative = text.replacen("width 1.7610733858505183", "width -1", 1);
    assert!(RbfInertiaModel::from_text(&negative).is_err());
}

#[test]
fn save_and_load_through_a_file() {
    let model = reference_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.rbf");
    model.save(std::fs::File::create(&path).unwrap()).unwrap();
    let back = RbfInertiaModel::load(std::io::BufReader::new(std::fs::File::open(&path).unwrap()))
        .unwrap();
    assert_eq!(back, model);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn text_round_trip_is_bit_exact(
        c in prop::collection::vec(-2.0f64..2.0, 1..5),
        w in prop::collection::vec(1e-3f64..10.0, 5),
        entries in prop::collection::vec(-1e3f64..1e3, 15),
    ) {
        let r = c.len();
        let centers = c.iter().map(|&x| DVector::from_vec(vec![x, -x])).collect();
        let sym = |k: usize| DMatrix::from_row_slice(2, 2, &[entries[k], entries[k + 1], entries[k + 1], entries[k + 2]]);
        let weights = (0..r).map(|i| sym(i * 2)).collect();
        let biases = (0..r).map(|i| sym(i * 2 + 5)).collect();
        let model = RbfInertiaModel::new(centers, w[..r].to_vec(), weights, biases, vec![0, 1]).unwrap();
        let back = RbfInertiaModel::from_text(&model.to_text()).unwrap();
        prop_assert_eq!(back, model);
    }
}

/// A plant whose exact controlled inertia is constant, so one center matches everywhere.
fn constant_plant() -> ElSystem {
    ElSystem::builder(2, 1)
        .mass_matrix(|_| DMatrix::identity(2, 2))
        .potential(|q| 0.5 * q[0] * q[0])
        .potential_grad(|q| DVector::from_vec(vec![q[0], 0.0]))
        .input_matrix(DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
        .left_annihilator(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
        .build()
        .unwrap()
}

#[test]
fn fit_recovers_an_exactly_representable_inertia() {
    // M = I, M_c = diag(2, 1), V_c = q₁² + q₂²: G⊥(∇V − M M_c⁻¹ ∇V_c) = q₁ − q₁ = 0.
    let sys = constant_plant();
    let cs = CenterSet::new(
        &sys,
        vec![DVector::from_vec(vec![0.0, 0.0])],
        vec![DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]))],
    )
    .unwrap();
    let grad = |q: &DVector<f64>| DVector::from_vec(vec![2.0 * q[0], 2.0 * q[1]]);
    let cfg = FitConfig {
        grid: SampleGrid::new(vec![
            GridAxis::Range {
                lower: -1.0,
                upper: 1.0,
                count: 21,
            },
            GridAxis::Fixed(0.0),
        ])
        .unwrap(),
        active: vec![0],
        ..FitConfig::default()
    };
    let outcome = fit::fit(&cs, &sys, &grad, &cfg).unwrap();
    assert!(
        outcome.after.max_norm <= 1e-9,
        "max residual {}",
        outcome.after.max_norm
    );
    assert!(outcome.after.max_norm <= outcome.before.max_norm);
}

#[test]
fn single_center_fit_is_exact_at_the_center_only() {
    let p = CartPendParams {
        centers: 1,
        ..CartPendParams::default()
    };
    let exp = cartpend::default_experiment(&p).unwrap();
    let pot = CartPendPotential::new(&p);
    let residual = |q1: f64| {
        let q = DVector::from_vec(vec![q1, p.q2_star]);
        lagshape_core::matching::pe_residual(
            &exp.system,
            |x: &DVector<f64>| exp.model.evaluate(x),
            |x: &DVector<f64>| pot.grad(x),
            &q,
        )
        .unwrap()
        .norm()
    };
    let center = residual(0.0);
    let edge = residual(1.309).max(residual(-1.309));
    assert!(center < 1e-3, "center residual {center}");
    assert!(edge > 10.0 * center, "edge {edge} vs center {center}");
}

#[test]
fn fit_rejects_mismatched_grid() {
    let p = CartPendParams::default();
    let sys = cartpend::build_system(&p).unwrap();
    let cs = cartpend::center_family(&p).unwrap();
    let pot = CartPendPotential::new(&p);
    let grad = |q: &DVector<f64>| pot.grad(q);
    let cfg = FitConfig::default();
    assert!(matches!(
        fit::fit(&cs, &sys, &grad, &cfg),
        Err(Error::Config(_))
    ));
}
