use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lagshape_bench::{default_experiment, probe_state};
use lagshape_core::cartpend::{self, CartPendParams};
use lagshape_core::{fit, sim, stability, ControlledInertia};

fn inertia(c: &mut Criterion) {
    let exp = default_experiment();
    let s = probe_state();
    c.bench_function("rbf_evaluate", |b| {
        b.iter(|| exp.model.evaluate(black_box(&s.q)))
    });
    c.bench_function("rbf_mass_flow", |b| {
        b.iter(|| exp.model.mass_flow(black_box(&s.q), black_box(&s.qd)))
    });
}

fn control(c: &mut Criterion) {
    let exp = default_experiment();
    let s = probe_state();
    c.bench_function("control_law", |b| {
        b.iter(|| exp.controller.control(black_box(&s)).unwrap())
    });
    c.bench_function("energy_rate", |b| {
        b.iter(|| stability::hc_dot(&exp.controller, black_box(&s)).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let exp = default_experiment();
    let s = probe_state();
    c.bench_function("rk4_closed_loop_step", |b| {
        b.iter(|| sim::step(&exp.system, Some(&exp.controller), black_box(&s), 1e-3).unwrap())
    });
    let cfg = exp.sim_config(s.clone(), 1.0, 1e-3, 10);
    c.bench_function("closed_loop_run_1s", |b| {
        b.iter(|| sim::run(&exp.system, Some(&exp.controller), black_box(&cfg)).unwrap())
    });
}

fn fitting(c: &mut Criterion) {
    let p = CartPendParams::default();
    let system = cartpend::build_system(&p).unwrap();
    let centers = cartpend::center_family(&p).unwrap();
    let pot = cartpend::CartPendPotential::new(&p);
    let grad = |q: &lagshape_core::DVector<f64>| lagshape_core::ControlledPotential::grad(&pot, q);
    let cfg = cartpend::default_fit_config(&p);
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    group.bench_function("default_eleven_centers", |b| {
        b.iter(|| fit::fit(&centers, &system, &grad, black_box(&cfg)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, inertia, control, simulation, fitting);
criterion_main!(benches);
