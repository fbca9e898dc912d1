//! Closed-loop energy `H_c`, its derivative decomposition and the
//! higher-derivative (non-monotonic) Lyapunov scan.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{ControlBreakdown, ControllerSpec};
use crate::error::{Error, Result};
use crate::linalg::{self, fmt17, Factor};
use crate::matching::pe_residual_from;
use crate::sim::StateTrajectory;
use crate::system::State;
use crate::table::Table;

/// `H_c = ½ q̇ᵀ M̂_c(q) q̇ + V_c(q)`.
pub fn hc(spec: &ControllerSpec, s: &State) -> f64 {
    let mc = spec.inertia().evaluate(&s.q);
    0.5 * s.qd.dot(&(mc * &s.qd)) + spec.potential().value(&s.q)
}

/// Matching error `ε̄(q) = G⊥(∇V − M M̂_c⁻¹ ∇V_c)`.
pub fn eps_bar(spec: &ControllerSpec, q: &DVector<f64>) -> Result<DVector<f64>> {
    let sys = spec.system();
    pe_residual_from(
        sys,
        &sys.mass_matrix(q),
        &spec.inertia().evaluate(q),
        &sys.potential_grad(q),
        &spec.potential().grad(q),
    )
}

/// `ε̂(q) = M̂_c M⁻¹ G⊥ᵀ (G⊥G⊥ᵀ)⁻¹ ε̄(q)`: the unmatched force seen by `H_c`.
pub fn eps_hat(spec: &ControllerSpec, q: &DVector<f64>) -> Result<DVector<f64>> {
    let sys = spec.system();
    let mass = Factor::new(&sys.mass_matrix(q), "mass matrix M(q)")?;
    eps_hat_with(spec, &mass, &spec.inertia().evaluate(q), &eps_bar(spec, q)?)
}

fn eps_hat_with(
    spec: &ControllerSpec,
    mass: &Factor,
    mc: &DMatrix<f64>,
    eps_bar: &DVector<f64>,
) -> Result<DVector<f64>> {
    let gp = spec.system().annihilator();
    let gram = Factor::new(&(gp * gp.transpose()), "G⊥G⊥ᵀ")?;
    Ok(mc * mass.solve_vec(&(gp.transpose() * gram.solve_vec(eps_bar))))
}

/// `Ḣ_c = Ṗ + ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HcDot {
    pub total: f64,
    /// `−q̇ᵀRq̇ − q̇ᵀ M̂_c M⁻¹ G K_v Gᵀ M⁻¹ M̂_c q̇`.
    pub p_dot: f64,
    /// `−q̇ᵀ ε̂(q)`.
    pub eps: f64,
}

pub fn hc_dot(spec: &ControllerSpec, s: &State) -> Result<HcDot> {
    let b = spec.breakdown(s)?;
    hc_dot_from(spec, &b, s)
}

/// Same as [`hc_dot`], reusing an already evaluated control breakdown.
pub fn hc_dot_from(spec: &ControllerSpec, b: &ControlBreakdown, s: &State) -> Result<HcDot> {
    let sys = spec.system();
    let t = &b.terms;
    let w = sys.input_matrix().transpose() * t.mass_factor.solve_vec(&(&t.mc * &s.qd));
    let damping = w.dot(&spec.gains().kv.apply(&w));
    let p_dot = -s.qd.dot(&(&b.r * &s.qd)) - damping;
    let ebar = pe_residual_from(
        sys,
        &t.mass,
        &t.mc,
        &sys.potential_grad(&s.q),
        &spec.potential().grad(&s.q),
    )?;
    let eps = -s.qd.dot(&eps_hat_with(spec, &t.mass_factor, &t.mc, &ebar)?);
    Ok(HcDot {
        total: p_dot + eps,
        p_dot,
        eps,
    })
}

/// `dH_c/dt` by the chain rule from an acceleration:
/// `q̇ᵀM̂_c q̈ + ½ q̇ᵀ(∂(M̂_c q̇)/∂q) q̇ + ∇V_cᵀ q̇`. Independent of the
/// decomposition in [`hc_dot`]; the two agree along closed-loop motion.
pub fn hc_dot_chain(spec: &ControllerSpec, s: &State, qdd: &DVector<f64>) -> f64 {
    let mc = spec.inertia();
    let flow = mc.mass_flow(&s.q, &s.qd);
    s.qd.dot(&(mc.evaluate(&s.q) * qdd))
        + 0.5 * s.qd.dot(&(flow * &s.qd))
        + spec.potential().grad(&s.q).dot(&s.qd)
}

// ---- Lagrange-stability scan ---------------------------------------------

/// Coefficient pairs `(α₁, α₂)` of `α₂V⃛ + α₁V̈ + V̇`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub pairs: Vec<(f64, f64)>,
}

impl ScanGrid {
    /// `count × count` log-spaced pairs over `[lo, hi]` plus `(0, 0)`.
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && count >= 2) {
            return Err(Error::Config(
                "scan grid needs 0 < lo < hi and count >= 2".into(),
            ));
        }
        let (a, b) = (lo.log10(), hi.log10());
        let axis: Vec<f64> = (0..count)
            .map(|k| 10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64))
            .collect();
        let mut pairs = vec![(0.0, 0.0)];
        for &a1 in &axis {
            for &a2 in &axis {
                pairs.push((a1, a2));
            }
        }
        Ok(Self { pairs })
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() || self.pairs.iter().any(|&(a, b)| !(a >= 0.0 && b >= 0.0)) {
            return Err(Error::Config(
                "scan coefficients must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ScanGrid {
    fn default() -> Self {
        Self::log_spaced(1e-3, 1e2, 16).expect("static grid is valid")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPair {
    pub alpha1: f64,
    pub alpha2: f64,
    pub passed: bool,
    /// Largest value of the expression over the evaluated samples.
    pub worst_margin: f64,
    pub worst_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovScan {
    pub rho: f64,
    pub pairs: Vec<ScanPair>,
    /// True when at least one pair passes.
    pub verdict: bool,
    /// Samples outside the exclusion ball where the expression was evaluated.
    pub evaluated: usize,
    pub times: Vec<f64>,
    pub v_dot: Vec<f64>,
    pub v_ddot: Vec<f64>,
    pub v_dddot: Vec<f64>,
}

/// Minimum number of trajectory rows the scan accepts.
pub const SCAN_MIN_SAMPLES: usize = 5;
const SMOOTHING_WINDOW: usize = 7;

/// Local quadratic least-squares smoothing over a `window`-sample window
/// (shifted inward at the ends), evaluated at each sample time.
pub fn smooth_quadratic(t: &[f64], y: &[f64], window: usize) -> Vec<f64> {
    let n = t.len();
    let w = window.min(n);
    (0..n)
        .map(|k| {
            let start = k.saturating_sub(w / 2).min(n - w);
            let t0 = t[k];
            // Normal equations of the 3-parameter fit, centered on t_k.
            let mut a = DMatrix::<f64>::zeros(3, 3);
            let mut b = DVector::<f64>::zeros(3);
            for j in start..start + w {
                let x = t[j] - t0;
                let phi = [1.0, x, x * x];
                for r in 0..3 {
                    b[r] += phi[r] * y[j];
                    for c in 0..3 {
                        a[(r, c)] += phi[r] * phi[c];
                    }
                }
            }
            match a.lu().solve(&b) {
                Some(c) if w >= 3 => c[0],
                _ => y[k],
            }
        })
        .collect()
}

/// Evaluates `α₂V⃛ + α₁V̈ + V̇ < 0` with `V = H_c` along a trajectory, outside
/// the ball `‖(q − q*, q̇)‖ ≤ ρ`.
pub fn lagrange_scan(
    traj: &StateTrajectory,
    q_star: &DVector<f64>,
    grid: &ScanGrid,
    rho: f64,
) -> Result<LyapunovScan> {
    grid.validate()?;
    if !(rho >= 0.0) {
        return Err(Error::Config(format!(
            "exclusion radius must be nonnegative, got {rho}"
        )));
    }
    let rows = &traj.rows;
    if rows.len() < SCAN_MIN_SAMPLES {
        return Err(Error::TooShort {
            len: rows.len(),
            min: SCAN_MIN_SAMPLES,
        });
    }
    let times: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let raw: Vec<f64> = rows.iter().map(|r| r.hc_dot).collect();
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(
            "trajectory has no closed-loop energy-rate channel".into(),
        ));
    }
    let v_dot = smooth_quadratic(&times, &raw, SMOOTHING_WINDOW);
    let n = rows.len();
    let mut v_ddot = vec![f64::NAN; n];
    let mut v_dddot = vec![f64::NAN; n];
    for k in 1..n - 1 {
        let (hm, hp) = (times[k] - times[k - 1], times[k + 1] - times[k]);
        let (fm, f0, fp) = (v_dot[k - 1], v_dot[k], v_dot[k + 1]);
        // Three-point derivatives, exact for quadratics on a nonuniform mesh.
        v_ddot[k] =
            (hm * hm * fp - hp * hp * fm + (hp * hp - hm * hm) * f0) / (hm * hp * (hm + hp));
        v_dddot[k] = 2.0 * ((fp - f0) / hp - (f0 - fm) / hm) / (hp + hm);
    }
    let evaluated: Vec<usize> = (1..n - 1)
        .filter(|&k| State::new(rows[k].q.clone(), rows[k].qd.clone()).distance_to(q_star) > rho)
        .collect();

    let pairs: Vec<ScanPair> = grid
        .pairs
        .par_iter()
        .map(|&(alpha1, alpha2)| {
            let mut worst_margin = f64::NEG_INFINITY;
            let mut worst_time = f64::NAN;
            for &k in &evaluated {
                let e = alpha2 * v_dddot[k] + alpha1 * v_ddot[k] + v_dot[k];
                if e > worst_margin || worst_time.is_nan() {
                    worst_margin = e;
                    worst_time = times[k];
                }
            }
            ScanPair {
                alpha1,
                alpha2,
                passed: evaluated.is_empty() || worst_margin < 0.0,
                worst_margin,
                worst_time,
            }
        })
        .collect();
    Ok(LyapunovScan {
        rho,
        verdict: pairs.iter().any(|p| p.passed),
        evaluated: evaluated.len(),
        pairs,
        times,
        v_dot,
        v_ddot,
        v_dddot,
    })
}

impl LyapunovScan {
    /// Columns `alpha1, alpha2, pass, worst_margin, worst_time [s]`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(
            ["alpha1", "alpha2", "pass", "worst_margin", "worst_time [s]"]
                .map(String::from)
                .to_vec(),
        );
        t.comment(format!(
            "rho = {}, evaluated_samples = {}, verdict = {}",
            fmt17(self.rho),
            self.evaluated,
            self.verdict
        ));
        for p in &self.pairs {
            t.push(vec![
                p.alpha1,
                p.alpha2,
                if p.passed { 1.0 } else { 0.0 },
                p.worst_margin,
                p.worst_time,
            ]);
        }
        t
    }

    pub fn passing(&self) -> impl Iterator<Item = &ScanPair> {
        self.pairs.iter().filter(|p| p.passed)
    }
}

// ---- matching-error path integral ----------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorIntegral {
    /// Accumulated `∫ q̇ᵀ ε̂ dt` at every row.
    pub values: Vec<f64>,
    pub final_value: f64,
    /// Running maximum of `|∫ q̇ᵀ ε̂ dt|` at every row.
    pub envelope: Vec<f64>,
    pub bound: f64,
}

/// Trapezoid-rule accumulation of `q̇ᵀ ε̂(q)` (the negated `ε` channel).
pub fn error_path_integral(traj: &StateTrajectory) -> Result<ErrorIntegral> {
    if traj.rows.is_empty() {
        return Err(Error::TooShort { len: 0, min: 1 });
    }
    let mut values = Vec::with_capacity(traj.rows.len());
    let mut envelope = Vec::with_capacity(traj.rows.len());
    let (mut acc, mut peak) = (0.0f64, 0.0f64);
    for (k, row) in traj.rows.iter().enumerate() {
        if k > 0 {
            let prev = &traj.rows[k - 1];
            acc += 0.5 * (row.t - prev.t) * (-row.eps - prev.eps);
        }
        peak = peak.max(acc.abs());
        values.push(acc);
        envelope.push(peak);
    }
    Ok(ErrorIntegral {
        final_value: acc,
        bound: peak,
        values,
        envelope,
    })
}

/// Earliest recorded time after which the state stays within `radius` of
/// `(q*, 0)` for the rest of the trajectory.
pub fn convergence_time(traj: &StateTrajectory, q_star: &DVector<f64>, radius: f64) -> Option<f64> {
    let mut t_conv = None;
    for row in traj.rows.iter().rev() {
        let d = ((&row.q - q_star).norm_squared() + row.qd.norm_squared()).sqrt();
        if d < radius {
            t_conv = Some(row.t);
        } else {
            break;
        }
    }
    t_conv
}

/// Minimum eigenvalue of `R` at a state (diagnostic helper).
pub fn dissipation_min_eig(spec: &ControllerSpec, s: &State) -> Result<f64> {
    Ok(linalg::min_eigen(&spec.dissipative(s)?).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_reproduces_quadratics() {
        let t: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x).collect();
        let s = smooth_quadratic(&t, &y, 7);
        for (a, b) in s.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn default_grid_has_corner_and_log_pairs() {
        let g = ScanGrid::default();
        assert_eq!(g.pairs.len(), 257);
        assert_eq!(g.pairs[0], (0.0, 0.0));
        assert!((g.pairs[1].0 - 1e-3).abs() < 1e-18);
        assert!((g.pairs[256].1 - 1e2).abs() < 1e-12);
    }
}
