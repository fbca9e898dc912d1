//! Fixed-step RK4 integration of open- and closed-loop dynamics.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::ControllerSpec;
use crate::error::{check_len, Error, Result};
use crate::linalg::fmt17;
use crate::stability;
use crate::system::{ElSystem, State};
use crate::table::{self, Table};

/// Default integration step in seconds.
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub initial: State,
    /// Record every `stride`-th step (the final step is always recorded).
    pub stride: usize,
}

impl SimConfig {
    pub fn new(initial: State, t_end: f64) -> Self {
        Self {
            t_end,
            dt: DEFAULT_DT,
            initial,
            stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end >= self.dt && self.t_end.is_finite()) {
            return Err(Error::Config(format!(
                "t_end must be at least dt, got {}",
                self.t_end
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if !self.initial.is_finite() {
            return Err(Error::Config("initial state must be finite".into()));
        }
        Ok(())
    }

    /// Number of steps; `t_end` is rounded to the nearest multiple of `dt`.
    pub fn steps(&self) -> usize {
        ((self.t_end / self.dt).round() as usize).max(1)
    }
}

/// One recorded sample. Closed-loop diagnostics are `NaN` in open-loop runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub u: DVector<f64>,
    /// Open-loop total energy `½q̇ᵀMq̇ + V`.
    pub energy: f64,
    pub hc: f64,
    pub hc_dot: f64,
    pub p_dot: f64,
    pub eps: f64,
    pub eps_bar_norm: f64,
}

impl TrajectoryRow {
    pub fn state(&self) -> State {
        State::new(self.q.clone(), self.qd.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateTrajectory {
    pub n: usize,
    pub m: usize,
    pub closed_loop: bool,
    pub rows: Vec<TrajectoryRow>,
    /// Set when integration stopped early; `rows` then ends at the last
    /// finite state.
    pub error: Option<String>,
}

impl StateTrajectory {
    pub fn last(&self) -> Option<&TrajectoryRow> {
        self.rows.last()
    }

    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }

    /// Columns with units; the provenance `comments` are written first.
    pub fn to_table(&self, comments: &[String]) -> Table {
        let mut cols = vec!["t [s]".to_string()];
        cols.extend(table::indexed("q", self.n, "rad|m"));
        cols.extend(table::indexed("qd", self.n, "rad/s|m/s"));
        cols.extend(table::indexed("u", self.m, "N"));
        cols.extend(
            [
                "energy [J]",
                "hc [J]",
                "hc_dot [W]",
                "p_dot [W]",
                "eps [W]",
                "eps_bar_norm [N]",
            ]
            .map(String::from),
        );
        let mut t = Table::new(cols);
        t.comments.extend(comments.iter().cloned());
        for r in &self.rows {
            let mut row = vec![r.t];
            row.extend(r.q.iter());
            row.extend(r.qd.iter());
            row.extend(r.u.iter());
            row.extend([r.energy, r.hc, r.hc_dot, r.p_dot, r.eps, r.eps_bar_norm]);
            t.push(row);
        }
        t
    }

    /// CSV text; an integration failure is appended as a final marker line.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut s = self.to_table(comments).to_string_lossy();
        if let Some(e) = &self.error {
            let t = self.rows.last().map_or(0.0, |r| r.t);
            s.push_str(&format!("# error after t = {}: {e}\n", fmt17(t)));
        }
        s
    }
}

fn accel(sys: &ElSystem, spec: Option<&ControllerSpec>, s: &State) -> Result<DVector<f64>> {
    let u = match spec {
        Some(c) => c.control(s)?,
        None => DVector::zeros(sys.inputs()),
    };
    sys.open_loop_accel(s, &u)
}

/// One classical RK4 step of `q̈ = M⁻¹(G u(s) − C q̇ − ∇V)`.
pub fn step(sys: &ElSystem, spec: Option<&ControllerSpec>, s: &State, dt: f64) -> Result<State> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    check_len("state q", sys.dof(), s.q.len())?;
    check_len("state q̇", sys.dof(), s.qd.len())?;
    let k1v = accel(sys, spec, s)?;
    let k1q = s.qd.clone();
    let s2 = State::new(&s.q + &k1q * (dt / 2.0), &s.qd + &k1v * (dt / 2.0));
    let k2v = accel(sys, spec, &s2)?;
    let k2q = s2.qd.clone();
    let s3 = State::new(&s.q + &k2q * (dt / 2.0), &s.qd + &k2v * (dt / 2.0));
    let k3v = accel(sys, spec, &s3)?;
    let k3q = s3.qd.clone();
    let s4 = State::new(&s.q + &k3q * dt, &s.qd + &k3v * dt);
    let k4v = accel(sys, spec, &s4)?;
    let k4q = s4.qd.clone();
    let next = State::new(
        &s.q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (dt / 6.0),
        &s.qd + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0),
    );
    if !next.is_finite() {
        return Err(Error::NonFinite { t: f64::NAN });
    }
    Ok(next)
}

fn record(
    sys: &ElSystem,
    spec: Option<&ControllerSpec>,
    t: f64,
    s: &State,
) -> Result<TrajectoryRow> {
    let energy = sys.total_energy(s);
    match spec {
        None => Ok(TrajectoryRow {
            t,
            q: s.q.clone(),
            qd: s.qd.clone(),
            u: DVector::zeros(sys.inputs()),
            energy,
            hc: f64::NAN,
            hc_dot: f64::NAN,
            p_dot: f64::NAN,
            eps: f64::NAN,
            eps_bar_norm: f64::NAN,
        }),
        Some(c) => {
            let b = c.breakdown(s)?;
            let d = stability::hc_dot_from(c, &b, s)?;
            Ok(TrajectoryRow {
                t,
                q: s.q.clone(),
                qd: s.qd.clone(),
                u: b.u,
                energy,
                hc: stability::hc(c, s),
                hc_dot: d.total,
                p_dot: d.p_dot,
                eps: d.eps,
                eps_bar_norm: stability::eps_bar(c, &s.q)?.norm(),
            })
        }
    }
}

/// Integrates from `cfg.initial` for `cfg.steps()` steps at `t_k = k·dt`.
/// Integration failures end the trajectory early and set its error marker.
pub fn run(
    sys: &ElSystem,
    spec: Option<&ControllerSpec>,
    cfg: &SimConfig,
) -> Result<StateTrajectory> {
    cfg.validate()?;
    check_len("initial q", sys.dof(), cfg.initial.q.len())?;
    check_len("initial q̇", sys.dof(), cfg.initial.qd.len())?;
    let steps = cfg.steps();
    let mut traj = StateTrajectory {
        n: sys.dof(),
        m: sys.inputs(),
        closed_loop: spec.is_some(),
        rows: Vec::with_capacity(steps / cfg.stride + 2),
        error: None,
    };
    let mut s = cfg.initial.clone();
    match record(sys, spec, 0.0, &s) {
        Ok(r) => traj.rows.push(r),
        Err(e) => {
            traj.error = Some(e.to_string());
            return Ok(traj);
        }
    }
    for k in 1..=steps {
        let t = k as f64 * cfg.dt;
        match step(sys, spec, &s, cfg.dt) {
            Ok(next) => s = next,
            Err(Error::NonFinite { .. }) => {
                traj.error = Some(Error::NonFinite { t }.to_string());
                break;
            }
            Err(e) => {
                traj.error = Some(format!("at t = {t}: {e}"));
                break;
            }
        }
        if k % cfg.stride == 0 || k == steps {
            match record(sys, spec, t, &s) {
                Ok(r) => traj.rows.push(r),
                Err(e) => {
                    traj.error = Some(format!("at t = {t}: {e}"));
                    break;
                }
            }
        }
    }
    Ok(traj)
}

/// Independent runs from several configurations, executed concurrently.
pub fn run_many(
    sys: &ElSystem,
    spec: Option<&ControllerSpec>,
    cfgs: &[SimConfig],
) -> Result<Vec<StateTrajectory>> {
    cfgs.par_iter().map(|c| run(sys, spec, c)).collect()
}
