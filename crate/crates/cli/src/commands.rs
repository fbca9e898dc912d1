//! The four subcommands. Each writes its artifacts under the configured
//! output directory and returns a summary for the console.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use lagshape_core::cartpend::{CartPendPotential, Experiment};
use lagshape_core::linalg::{self, fmt17};
use lagshape_core::matching::{self, dissipation_residual, ke_residual, lemma1_check};
use lagshape_core::sim::{self, StateTrajectory};
use lagshape_core::stability::{self, hc_dot};
use lagshape_core::table::Table;
use lagshape_core::{
    ControlledInertia, ControlledPotential, DVector, MatchingReport, RbfInertiaModel, State,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const MODEL_FILE: &str = "model.rbf";
pub const RESIDUAL_MAP_FILE: &str = "residual_map.csv";
pub const SURFACE_FILE: &str = "vc_surface.csv";
pub const SCAN_FILE: &str = "scan.csv";
pub const VERIFY_FILE: &str = "verify.json";
pub const REPORT_FILE: &str = "report.csv";
pub const SYNTH_ERROR_FILE: &str = "synth_error.txt";

/// Settling box: `‖(q₁, q̇)‖ < SETTLE_ANGLE` and `|q₂ − q₂*| < SETTLE_CART`.
pub const SETTLE_ANGLE: f64 = 1e-2;
pub const SETTLE_CART: f64 = 1e-1;

pub fn trajectory_file(k: usize) -> String {
    format!("trajectory_{}.csv", k + 1)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

fn with_provenance(mut t: Table, cfg: &ExperimentConfig) -> String {
    let mut comments = cfg.echo();
    comments.append(&mut t.comments);
    t.comments = comments;
    t.to_string_lossy()
}

pub fn load_model(path: &Path) -> Result<RbfInertiaModel, CliError> {
    let file =
        File::open(path).map_err(|e| CliError::ModelLoad(format!("{}: {e}", path.display())))?;
    RbfInertiaModel::load(BufReader::new(file))
        .map_err(|e| CliError::ModelLoad(format!("{}: {e}", path.display())))
}

/// Loads `model` when given, otherwise fits a fresh one from the configuration.
pub fn experiment(cfg: &ExperimentConfig, model: Option<&Path>) -> Result<Experiment, CliError> {
    match model {
        Some(path) => {
            let m = load_model(path)?;
            if m.dim() != 2 {
                return Err(CliError::ModelLoad(format!(
                    "{}: model has dimension {}, the cart-pendulum needs 2",
                    path.display(),
                    m.dim()
                )));
            }
            Ok(Experiment::with_model(&cfg.params, m)?)
        }
        None => Ok(Experiment::synthesize(&cfg.params, &cfg.fit_config())?),
    }
}

fn residual_report(exp: &Experiment, cfg: &ExperimentConfig) -> Result<MatchingReport, CliError> {
    if let Some(fit) = &exp.fit {
        let lemma = lemma1_check(&exp.centers, &exp.system)?;
        return Ok(fit.after.clone().with_lemma1(lemma));
    }
    let pot = exp.potential.clone();
    let grad = move |q: &DVector<f64>| pot.grad(q);
    let report = MatchingReport::evaluate(
        &exp.system,
        exp.model.as_ref(),
        &grad,
        cfg.fit_config().grid.points(),
    )?;
    Ok(report.with_lemma1(lemma1_check(&exp.centers, &exp.system)?))
}

// ---- synth -----------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct SynthSummary {
    pub centers: usize,
    pub max_before: f64,
    pub max_after: f64,
    pub rms_after: f64,
    pub iterations: usize,
    pub converged: bool,
    pub model_path: PathBuf,
}

pub fn synth(cfg: &ExperimentConfig) -> Result<SynthSummary, CliError> {
    let exp = match experiment(cfg, None) {
        Ok(e) => e,
        Err(e) => {
            if !matches!(e, CliError::Config(_)) {
                write(
                    &cfg.out,
                    SYNTH_ERROR_FILE,
                    &format!("{}\n{e}\n", cfg.echo().join("\n")),
                )?;
            }
            return Err(e);
        }
    };
    let fit = exp
        .fit
        .as_ref()
        .expect("synthesized experiments carry a fit");
    let report = residual_report(&exp, cfg)?;
    write(
        &cfg.out,
        RESIDUAL_MAP_FILE,
        &with_provenance(report.to_table(), cfg),
    )?;
    let model_path = write(&cfg.out, MODEL_FILE, &exp.model.to_text())?;
    Ok(SynthSummary {
        centers: exp.model.len(),
        max_before: fit.before.max_norm,
        max_after: report.max_norm,
        rms_after: report.rms_norm,
        iterations: fit.iterations,
        converged: fit.converged,
        model_path,
    })
}

// ---- simulate --------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub file: String,
    pub initial: [f64; 4],
    pub rows: usize,
    pub final_angle_speed_norm: f64,
    pub final_cart_error: f64,
    pub settle_time: Option<f64>,
    pub error: Option<String>,
}

/// Earliest recorded time after which the state stays in the settling box.
pub fn settle_time(traj: &StateTrajectory, q2_star: f64) -> Option<f64> {
    let mut t = None;
    for row in traj.rows.iter().rev() {
        let inside = (row.q[0].powi(2) + row.qd.norm_squared()).sqrt() < SETTLE_ANGLE
            && (row.q[1] - q2_star).abs() < SETTLE_CART;
        if !inside {
            break;
        }
        t = Some(row.t);
    }
    t
}

fn summarize_run(k: usize, initial: [f64; 4], tr: &StateTrajectory, q2_star: f64) -> RunSummary {
    let last = tr.last();
    RunSummary {
        file: trajectory_file(k),
        initial,
        rows: tr.rows.len(),
        final_angle_speed_norm: last
            .map_or(f64::NAN, |r| (r.q[0].powi(2) + r.qd.norm_squared()).sqrt()),
        final_cart_error: last.map_or(f64::NAN, |r| (r.q[1] - q2_star).abs()),
        settle_time: settle_time(tr, q2_star),
        error: tr.error.clone(),
    }
}

fn surface_table(exp: &Experiment, cfg: &ExperimentConfig) -> Table {
    let s = &cfg.surface;
    let q2s = exp.params.q2_star;
    let mut t = Table::new(["q1 [rad]", "q2 [m]", "vc [J]"].map(String::from).to_vec());
    t.comment("controlled potential V_c over the workspace");
    for i in 0..s.q1_points {
        let q1 = -lagshape_core::cartpend::WORKSPACE_Q1
            + 2.0 * lagshape_core::cartpend::WORKSPACE_Q1 * i as f64 / (s.q1_points - 1) as f64;
        for j in 0..s.q2_points {
            let q2 =
                q2s - s.q2_half_width + 2.0 * s.q2_half_width * j as f64 / (s.q2_points - 1) as f64;
            t.push(vec![
                q1,
                q2,
                exp.potential.value(&DVector::from_vec(vec![q1, q2])),
            ]);
        }
    }
    t
}

fn run_all(exp: &Experiment, cfg: &ExperimentConfig) -> Result<Vec<StateTrajectory>, CliError> {
    Ok(sim::run_many(
        &exp.system,
        Some(&exp.controller),
        &cfg.sim_configs(),
    )?)
}

pub fn simulate(cfg: &ExperimentConfig, model: Option<&Path>) -> Result<Vec<RunSummary>, CliError> {
    let exp = experiment(cfg, model)?;
    let trajs = run_all(&exp, cfg)?;
    let echo = cfg.echo();
    let mut out = Vec::with_capacity(trajs.len());
    for (k, (tr, ic)) in trajs
        .iter()
        .zip(&cfg.simulation.initial_conditions)
        .enumerate()
    {
        write(&cfg.out, &trajectory_file(k), &tr.to_csv(&echo))?;
        out.push(summarize_run(k, *ic, tr, exp.params.q2_star));
    }
    write(
        &cfg.out,
        SURFACE_FILE,
        &with_provenance(surface_table(&exp, cfg), cfg),
    )?;
    let failed: Vec<String> = out
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.file)))
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "integration stopped early in {}",
            failed.join("; ")
        )));
    }
    Ok(out)
}

// ---- verify ----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// The measured quantity (a maximum, minimum or count, per check).
    pub value: f64,
    pub tolerance: f64,
    /// Where the worst value occurred.
    pub location: String,
}

impl Check {
    fn new(name: &str, passed: bool, value: f64, tolerance: f64, location: String) -> Self {
        Self {
            name: name.into(),
            passed,
            value,
            tolerance,
            location,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn failed(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.clone())
            .collect()
    }
}

fn state_label(s: &State) -> String {
    format!(
        "q = ({}, {}), qd = ({}, {})",
        fmt17(s.q[0]),
        fmt17(s.q[1]),
        fmt17(s.qd[0]),
        fmt17(s.qd[1])
    )
}

/// Tracks the largest value of a quantity and where it occurred.
struct Worst {
    value: f64,
    at: String,
}

impl Worst {
    fn new() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            at: String::new(),
        }
    }

    fn update(&mut self, v: f64, at: impl FnOnce() -> String) {
        if v > self.value || v.is_nan() {
            self.value = v;
            self.at = at();
        }
    }
}

fn random_states(cfg: &ExperimentConfig, exp: &Experiment) -> Vec<State> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ws = exp.params.workspace();
    let v = cfg.verify.max_speed;
    (0..cfg.verify.random_states)
        .map(|_| {
            let q = ws.sample(&mut rng);
            let qd = DVector::from_fn(2, |_, _| {
                if v > 0.0 {
                    rng.random_range(-v..=v)
                } else {
                    0.0
                }
            });
            State::new(q, qd)
        })
        .collect()
}

fn pointwise_checks(exp: &Experiment, cfg: &ExperimentConfig) -> Result<Vec<Check>, CliError> {
    let tol = cfg.verify.tolerance;
    let ctrl = &exp.controller;
    let mc = ctrl.inertia();
    let (mut skew, mut kinetic, mut dissipation, mut neg_eig) =
        (Worst::new(), Worst::new(), Worst::new(), Worst::new());
    let mut indefinite = 0usize;
    for s in random_states(cfg, exp) {
        let terms = ctrl.kinetic_terms(&s)?;
        let r = ctrl.dissipative(&s)?;
        skew.update((&terms.j + terms.j.transpose()).amax(), || state_label(&s));
        kinetic.update(
            ke_residual(&exp.system, mc, &terms.j, &r, &s)?.amax(),
            || state_label(&s),
        );
        dissipation.update(
            dissipation_residual(&exp.system, mc, &r, &s)?.amax(),
            || state_label(&s),
        );
        let min_eig = linalg::min_eigen(&r).0;
        if min_eig < -cfg.verify.psd_tolerance {
            indefinite += 1;
        }
        neg_eig.update(-min_eig, || state_label(&s));
    }
    let n = cfg.verify.random_states;
    Ok(vec![
        Check::new(
            "gyroscopic_skew",
            skew.value <= tol,
            skew.value,
            tol,
            skew.at,
        ),
        Check::new(
            "kinetic_residual",
            kinetic.value <= tol,
            kinetic.value,
            tol,
            kinetic.at,
        ),
        Check::new(
            "dissipation_residual",
            dissipation.value <= tol,
            dissipation.value,
            tol,
            dissipation.at,
        ),
        Check::new(
            "dissipation_psd",
            indefinite == 0,
            -neg_eig.value,
            -cfg.verify.psd_tolerance,
            format!(
                "{indefinite}/{n} states indefinite; most negative at {}",
                neg_eig.at
            ),
        ),
    ])
}

fn construction_checks(exp: &Experiment, cfg: &ExperimentConfig) -> Result<Vec<Check>, CliError> {
    let tol = cfg.verify.tolerance;
    let lemma = lemma1_check(&exp.centers, &exp.system)?;
    let pot = CartPendPotential::new(&exp.params);
    let residuals = matching::pe_residual_at_centers(&exp.centers, &exp.system, |q| pot.grad(q))?;
    let (worst_center, worst_res) = residuals
        .iter()
        .map(|r| r.amax())
        .enumerate()
        .fold((0, 0.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });

    // M̂_c over a fine sweep of the workspace (it depends on q₁ only).
    let mut pd = Worst::new();
    for k in 0..=1000 {
        let q1 = -lagshape_core::cartpend::WORKSPACE_Q1
            + 2.0 * lagshape_core::cartpend::WORKSPACE_Q1 * k as f64 / 1000.0;
        let q = DVector::from_vec(vec![q1, exp.params.q2_star]);
        pd.update(-linalg::min_eigen(&exp.model.evaluate(&q)).0, || {
            format!("q1 = {}", fmt17(q1))
        });
    }

    let rest = State::at_rest(exp.equilibrium());
    let u_eq = exp.controller.control(&rest)?.amax();
    Ok(vec![
        Check::new(
            "center_consistency",
            lemma.passed,
            lemma.max_deviation,
            lemma.tolerance,
            lemma
                .worst_pair
                .map_or(String::new(), |(i, j)| format!("centers {i} and {j}")),
        ),
        Check::new(
            "center_potential_residual",
            worst_res <= tol,
            worst_res,
            tol,
            format!("center {worst_center}"),
        ),
        Check::new(
            "inertia_positive_definite",
            pd.value < 0.0,
            -pd.value,
            0.0,
            pd.at,
        ),
        Check::new(
            "equilibrium_control",
            u_eq <= tol,
            u_eq,
            tol,
            "(q*, 0)".into(),
        ),
    ])
}

fn trajectory_checks(
    exp: &Experiment,
    cfg: &ExperimentConfig,
    tr: &StateTrajectory,
) -> Result<(Vec<Check>, stability::LyapunovScan), CliError> {
    let first = tr.rows.first().expect("a run records its initial state");
    let last = tr.last().expect("a run records its initial state");
    let mut p_dot = Worst::new();
    let mut balance = Worst::new();
    for row in &tr.rows {
        p_dot.update(row.p_dot, || format!("t = {}", fmt17(row.t)));
        let d = hc_dot(&exp.controller, &row.state())?;
        balance.update((d.total - d.p_dot - d.eps).abs(), || {
            format!("t = {}", fmt17(row.t))
        });
    }
    let scan = stability::lagrange_scan(tr, &exp.equilibrium(), &cfg.scan_grid()?, cfg.verify.rho)?;
    let integral = stability::error_path_integral(tr)?;
    let checks = vec![
        Check::new(
            "run_complete",
            tr.is_complete(),
            tr.rows.len() as f64,
            0.0,
            tr.error.clone().unwrap_or_default(),
        ),
        Check::new(
            "energy_decrease",
            last.hc < first.hc,
            last.hc - first.hc,
            0.0,
            format!("H_c {} -> {}", fmt17(first.hc), fmt17(last.hc)),
        ),
        Check::new(
            "energy_balance",
            balance.value <= 1e-14,
            balance.value,
            1e-14,
            balance.at,
        ),
        Check::new(
            "power_nonpositive",
            p_dot.value <= 0.0,
            p_dot.value,
            0.0,
            p_dot.at,
        ),
        Check::new(
            "lagrange_scan",
            scan.verdict,
            scan.passing().count() as f64,
            1.0,
            format!(
                "{} of {} pairs pass",
                scan.passing().count(),
                scan.pairs.len()
            ),
        ),
        Check::new(
            "error_integral_bounded",
            integral.bound.is_finite(),
            integral.bound,
            f64::INFINITY,
            format!("final value {}", fmt17(integral.final_value)),
        ),
    ];
    Ok((checks, scan))
}

/// Runs the invariant suite and the stability scan on the nominal (first) run.
pub fn verify(cfg: &ExperimentConfig, model: Option<&Path>) -> Result<VerifyReport, CliError> {
    let exp = experiment(cfg, model)?;
    let mut checks = construction_checks(&exp, cfg)?;
    checks.extend(pointwise_checks(&exp, cfg)?);
    let nominal = &cfg.sim_configs()[0];
    let tr = sim::run(&exp.system, Some(&exp.controller), nominal)?;
    let (traj_checks, scan) = trajectory_checks(&exp, cfg, &tr)?;
    checks.extend(traj_checks);
    write(&cfg.out, SCAN_FILE, &with_provenance(scan.to_table(), cfg))?;
    let report = VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "config": cfg,
        "passed": report.passed,
        "checks": report.checks,
    }))
    .map_err(anyhow::Error::from)?;
    write(&cfg.out, VERIFY_FILE, &(json + "\n"))?;
    Ok(report)
}

// ---- report ----------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub centers: usize,
    pub max_residual: f64,
    pub rms_residual: f64,
    pub runs: Vec<RunSummary>,
}

/// Matching statistics plus one summary row per closed-loop run.
pub fn report(cfg: &ExperimentConfig, model: Option<&Path>) -> Result<Report, CliError> {
    let exp = experiment(cfg, model)?;
    let residuals = residual_report(&exp, cfg)?;
    write(
        &cfg.out,
        RESIDUAL_MAP_FILE,
        &with_provenance(residuals.to_table(), cfg),
    )?;
    let trajs = run_all(&exp, cfg)?;
    let grid = cfg.scan_grid()?;
    let mut t = Table::new(
        [
            "run",
            "q1_0 [rad]",
            "q2_0 [m]",
            "qd1_0 [rad/s]",
            "qd2_0 [m/s]",
            "settle_time [s]",
            "final_angle_speed_norm",
            "final_cart_error [m]",
            "hc_start [J]",
            "hc_end [J]",
            "max_p_dot [W]",
            "error_integral_bound [J]",
            "scan_passing_pairs",
            "complete",
        ]
        .map(String::from)
        .to_vec(),
    );
    t.comment(format!(
        "matching residual over the fit grid: max = {}, rms = {}; settling box ‖(q1, qd)‖ < {}, |q2 - q2*| < {}; settle_time is NaN when never settled",
        fmt17(residuals.max_norm),
        fmt17(residuals.rms_norm),
        SETTLE_ANGLE,
        SETTLE_CART
    ));
    let mut runs = Vec::new();
    for (k, (tr, ic)) in trajs
        .iter()
        .zip(&cfg.simulation.initial_conditions)
        .enumerate()
    {
        let summary = summarize_run(k, *ic, tr, exp.params.q2_star);
        let max_p_dot = tr
            .rows
            .iter()
            .map(|r| r.p_dot)
            .fold(f64::NEG_INFINITY, f64::max);
        let bound = stability::error_path_integral(tr)?.bound;
        let passing = stability::lagrange_scan(tr, &exp.equilibrium(), &grid, cfg.verify.rho)
            .map_or(f64::NAN, |s| s.passing().count() as f64);
        t.push(vec![
            (k + 1) as f64,
            ic[0],
            ic[1],
            ic[2],
            ic[3],
            summary.settle_time.unwrap_or(f64::NAN),
            summary.final_angle_speed_norm,
            summary.final_cart_error,
            tr.rows.first().map_or(f64::NAN, |r| r.hc),
            tr.last().map_or(f64::NAN, |r| r.hc),
            max_p_dot,
            bound,
            passing,
            if tr.is_complete() { 1.0 } else { 0.0 },
        ]);
        runs.push(summary);
    }
    write(&cfg.out, REPORT_FILE, &with_provenance(t, cfg))?;
    Ok(Report {
        centers: exp.model.len(),
        max_residual: residuals.max_norm,
        rms_residual: residuals.rms_norm,
        runs,
    })
}
