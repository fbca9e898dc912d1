//! Potential- and kinetic-energy matching residuals and the center
//! consistency condition.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::inertia::ControlledInertia;
use crate::linalg::{self, Factor};
use crate::system::{ElSystem, State};
use crate::table::{self, Table};

/// Default tolerance for algebraic identities.
pub const ALGEBRAIC_TOL: f64 = 1e-9;

/// Tolerance for symmetry of user-supplied matrices.
const SYMMETRY_TOL: f64 = 1e-12;

/// Sub-region centers `qᵢ` with their frozen inertia pairs `(Mᵢ, M_ci)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterSet {
    centers: Vec<DVector<f64>>,
    mass: Vec<DMatrix<f64>>,
    controlled: Vec<DMatrix<f64>>,
}

impl CenterSet {
    /// Builds a center set, evaluating `Mᵢ = M(qᵢ)` from the system.
    pub fn new(
        sys: &ElSystem,
        centers: Vec<DVector<f64>>,
        controlled: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let mass = centers.iter().map(|q| sys.mass_matrix(q)).collect();
        Self::from_parts(centers, mass, controlled)
    }

    pub fn from_parts(
        centers: Vec<DVector<f64>>,
        mass: Vec<DMatrix<f64>>,
        controlled: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Config(
                "a center set needs at least one center".into(),
            ));
        }
        check_len("center set: mass matrices", centers.len(), mass.len())?;
        check_len(
            "center set: controlled inertias",
            centers.len(),
            controlled.len(),
        )?;
        let n = centers[0].len();
        for (i, ((q, m), mc)) in centers.iter().zip(&mass).zip(&controlled).enumerate() {
            if q.len() != n || m.shape() != (n, n) || mc.shape() != (n, n) {
                return Err(Error::Center {
                    index: i,
                    reason: format!("expected dimension {n}"),
                });
            }
            check_spd(i, mc)?;
        }
        Ok(Self {
            centers,
            mass,
            controlled,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn centers(&self) -> &[DVector<f64>] {
        &self.centers
    }

    pub fn mass(&self) -> &[DMatrix<f64>] {
        &self.mass
    }

    pub fn controlled(&self) -> &[DMatrix<f64>] {
        &self.controlled
    }

    /// Replaces `M_ci` at `index`, re-validating it.
    pub fn replace_controlled(&mut self, index: usize, mc: DMatrix<f64>) -> Result<()> {
        if index >= self.len() {
            return Err(Error::Center {
                index,
                reason: format!("out of range for {} centers", self.len()),
            });
        }
        if mc.shape() != (self.dim(), self.dim()) {
            return Err(Error::Center {
                index,
                reason: "wrong dimension".into(),
            });
        }
        check_spd(index, &mc)?;
        self.controlled[index] = mc;
        Ok(())
    }

    /// Keeps only the centers at `indices` (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Center {
                index: bad,
                reason: format!("out of range for {} centers", self.len()),
            });
        }
        Self::from_parts(
            indices.iter().map(|&i| self.centers[i].clone()).collect(),
            indices.iter().map(|&i| self.mass[i].clone()).collect(),
            indices
                .iter()
                .map(|&i| self.controlled[i].clone())
                .collect(),
        )
    }
}

fn check_spd(index: usize, mc: &DMatrix<f64>) -> Result<()> {
    if !linalg::is_symmetric(mc, SYMMETRY_TOL * mc.amax().max(1.0)) {
        return Err(Error::Center {
            index,
            reason: "controlled inertia is not symmetric".into(),
        });
    }
    let (min_eig, _) = linalg::min_eigen(mc);
    if !(min_eig > 0.0) {
        return Err(Error::Center {
            index,
            reason: format!(
                "controlled inertia is not positive definite (min eigenvalue {min_eig:.3e})"
            ),
        });
    }
    Ok(())
}

/// `G⊥(∇V − M M_c⁻¹ ∇V_c)` from already-evaluated quantities.
pub fn pe_residual_from(
    sys: &ElSystem,
    mass: &DMatrix<f64>,
    mc: &DMatrix<f64>,
    grad_v: &DVector<f64>,
    grad_vc: &DVector<f64>,
) -> Result<DVector<f64>> {
    let f = Factor::new(mc, "controlled inertia")?;
    Ok(sys.annihilator() * (grad_v - mass * f.solve_vec(grad_vc)))
}

/// Potential-energy matching residual `ε̄(q) = G⊥(∇V − M M_c⁻¹ ∇V_c)`.
pub fn pe_residual(
    sys: &ElSystem,
    mc_eval: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    vc_grad: impl Fn(&DVector<f64>) -> DVector<f64>,
    q: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len("configuration q", sys.dof(), q.len())?;
    pe_residual_from(
        sys,
        &sys.mass_matrix(q),
        &mc_eval(q),
        &sys.potential_grad(q),
        &vc_grad(q),
    )
}

/// Residual at every center using the frozen pair `(Mᵢ, M_ci)`.
pub fn pe_residual_at_centers(
    cs: &CenterSet,
    sys: &ElSystem,
    vc_grad: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    check_len("center dimension", sys.dof(), cs.dim())?;
    cs.centers
        .iter()
        .zip(&cs.mass)
        .zip(&cs.controlled)
        .enumerate()
        .map(|(i, ((q, m), mc))| {
            pe_residual_from(sys, m, mc, &sys.potential_grad(q), &vc_grad(q)).map_err(|e| {
                Error::Center {
                    index: i,
                    reason: e.to_string(),
                }
            })
        })
        .collect()
}

/// Outcome of the pairwise center consistency check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub passed: bool,
    pub max_deviation: f64,
    /// Pair attaining the maximum deviation; `None` for a single center.
    pub worst_pair: Option<(usize, usize)>,
    pub tolerance: f64,
}

/// Checks that `G⊥ Mᵢ M_ci⁻¹` is the same for every center, which makes a
/// single `V_c` satisfy every center's matching condition at once.
pub fn lemma1_check(cs: &CenterSet, sys: &ElSystem) -> Result<Lemma1Report> {
    lemma1_check_with_tol(cs, sys, ALGEBRAIC_TOL)
}

pub fn lemma1_check_with_tol(
    cs: &CenterSet,
    sys: &ElSystem,
    tolerance: f64,
) -> Result<Lemma1Report> {
    check_len("center dimension", sys.dof(), cs.dim())?;
    let rows = cs
        .mass
        .iter()
        .zip(&cs.controlled)
        .enumerate()
        .map(|(i, (m, mc))| {
            let f = Factor::new(mc, "controlled inertia").map_err(|e| Error::Center {
                index: i,
                reason: e.to_string(),
            })?;
            Ok(linalg::right_solve(&(sys.annihilator() * m), &f))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut max_deviation = 0.0;
    let mut worst_pair = None;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d = (&rows[i] - &rows[j]).norm();
            if worst_pair.is_none() || d > max_deviation {
                max_deviation = d;
                worst_pair = Some((i, j));
            }
        }
    }
    Ok(Lemma1Report {
        passed: max_deviation <= tolerance,
        max_deviation,
        worst_pair,
        tolerance,
    })
}

/// Kinetic matching residual in the rewritten form
/// `G⊥ M M̂_c⁻¹ [M̂_c M⁻¹ C − Ĉ_c − (J+R)] q̇`.
pub fn ke_residual(
    sys: &ElSystem,
    mc: &dyn ControlledInertia,
    j: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: &State,
) -> Result<DVector<f64>> {
    let terms = KineticParts::new(sys, mc, s)?;
    let bracket = &terms.mc * terms.mass_f.solve_mat(&terms.c) - &terms.cc - j - r;
    Ok(&terms.sigma * (bracket * &s.qd))
}

/// The same condition written out directly:
/// `G⊥ [C − M M̂_c⁻¹ Ĉ_c − M M̂_c⁻¹ (J+R)] q̇`.
pub fn ke_residual_expanded(
    sys: &ElSystem,
    mc: &dyn ControlledInertia,
    j: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: &State,
) -> Result<DVector<f64>> {
    let terms = KineticParts::new(sys, mc, s)?;
    let m_mc_inv = linalg::right_solve(&terms.mass, &terms.mc_f);
    let inner = &terms.c - &m_mc_inv * &terms.cc - &m_mc_inv * (j + r);
    Ok(sys.annihilator() * (inner * &s.qd))
}

/// Matrix-valued dissipation condition `Σ (Π − R)` with `Σ = G⊥ M M̂_c⁻¹`
/// and `Π = sym(M̂_c M⁻¹ C − Ĉ_c)`. Together with the skew choice of `J`
/// it makes the kinetic residual vanish for every `q̇`.
pub fn dissipation_residual(
    sys: &ElSystem,
    mc: &dyn ControlledInertia,
    r: &DMatrix<f64>,
    s: &State,
) -> Result<DMatrix<f64>> {
    let terms = KineticParts::new(sys, mc, s)?;
    let a = &terms.mc * terms.mass_f.solve_mat(&terms.c) - &terms.cc;
    Ok(&terms.sigma * (linalg::sym_part(&a) - r))
}

struct KineticParts {
    mass: DMatrix<f64>,
    mass_f: Factor,
    mc: DMatrix<f64>,
    mc_f: Factor,
    c: DMatrix<f64>,
    cc: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

impl KineticParts {
    fn new(sys: &ElSystem, mc_model: &dyn ControlledInertia, s: &State) -> Result<Self> {
        let c = sys.coriolis(s)?;
        check_len("controlled inertia dimension", sys.dof(), mc_model.dim())?;
        let mass = sys.mass_matrix(&s.q);
        let mass_f = Factor::new(&mass, "mass matrix M(q)")?;
        let mc = mc_model.evaluate(&s.q);
        let mc_f = Factor::new(&mc, "controlled inertia")?;
        let cc = mc_model.coriolis(&s.q, &s.qd);
        let sigma = linalg::right_solve(&(sys.annihilator() * &mass), &mc_f);
        Ok(Self {
            mass,
            mass_f,
            mc,
            mc_f,
            c,
            cc,
            sigma,
        })
    }
}

/// Residual statistics of `ε̄(q)` over a set of configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchingReport {
    pub points: Vec<DVector<f64>>,
    pub residuals: Vec<DVector<f64>>,
    pub max_norm: f64,
    pub rms_norm: f64,
    pub mean_norm: f64,
    /// Index into `points` of the largest residual.
    pub argmax: usize,
    pub lemma1: Option<Lemma1Report>,
}

impl MatchingReport {
    /// Evaluates `ε̄` at every point (in parallel).
    pub fn evaluate(
        sys: &ElSystem,
        mc: &dyn ControlledInertia,
        vc_grad: &(dyn Fn(&DVector<f64>) -> DVector<f64> + Sync),
        points: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let residuals = points
            .par_iter()
            .map(|q| pe_residual(sys, |x| mc.evaluate(x), vc_grad, q))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_residuals(points, residuals))
    }

    pub fn from_residuals(points: Vec<DVector<f64>>, residuals: Vec<DVector<f64>>) -> Self {
        let norms: Vec<f64> = residuals.iter().map(|r| r.norm()).collect();
        let count = norms.len().max(1) as f64;
        let (argmax, max_norm) = norms
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        Self {
            rms_norm: (norms.iter().map(|v| v * v).sum::<f64>() / count).sqrt(),
            mean_norm: norms.iter().sum::<f64>() / count,
            max_norm,
            argmax,
            points,
            residuals,
            lemma1: None,
        }
    }

    pub fn with_lemma1(mut self, report: Lemma1Report) -> Self {
        self.lemma1 = Some(report);
        self
    }

    /// Columns `q1..qn, eps_bar1..eps_bar(n−m), norm`.
    pub fn to_table(&self) -> Table {
        let n = self.points.first().map_or(0, |p| p.len());
        let k = self.residuals.first().map_or(0, |r| r.len());
        let mut columns = table::indexed("q", n, "");
        columns.extend(table::indexed("eps_bar", k, ""));
        columns.push("norm".into());
        let mut t = Table::new(columns);
        t.comment(format!(
            "max_norm = {}, rms_norm = {}, mean_norm = {}",
            linalg::fmt17(self.max_norm),
            linalg::fmt17(self.rms_norm),
            linalg::fmt17(self.mean_norm)
        ));
        if let Some(l) = &self.lemma1 {
            t.comment(format!(
                "center_consistency passed = {}, max_deviation = {}",
                l.passed,
                linalg::fmt17(l.max_deviation)
            ));
        }
        for (p, r) in self.points.iter().zip(&self.residuals) {
            let mut row: Vec<f64> = p.iter().copied().collect();
            row.extend(r.iter().copied());
            row.push(r.norm());
            t.push(row);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inertia::ExactInertia;

    fn pendulum_like() -> ElSystem {
        ElSystem::builder(2, 1)
            .mass_matrix(|q| DMatrix::from_row_slice(2, 2, &[1.0, q[0].cos(), q[0].cos(), 6.0]))
            .potential(|q| 9.8 * q[0].cos())
            .potential_grad(|q| DVector::from_vec(vec![-9.8 * q[0].sin(), 0.0]))
            .input_matrix(DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
            .left_annihilator(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .build()
            .unwrap()
    }

    #[test]
    fn identity_shaping_has_zero_pe_residual() {
        let sys = pendulum_like();
        let q = DVector::from_vec(vec![0.4, 1.0]);
        let r = pe_residual(&sys, |x| sys.mass_matrix(x), |x| sys.potential_grad(x), &q).unwrap();
        assert!(r.amax() < 1e-15);
    }

    #[test]
    fn scaled_inertia_zero_jr_has_zero_ke_residual() {
        let sys = pendulum_like();
        let mc = ExactInertia::scaled(&sys, 2.5);
        let s = State::from_slices(&[0.3, 0.1], &[1.2, -0.7]);
        let z = DMatrix::zeros(2, 2);
        assert!(ke_residual(&sys, &mc, &z, &z, &s).unwrap().amax() < 1e-13);
        assert!(ke_residual_expanded(&sys, &mc, &z, &z, &s).unwrap().amax() < 1e-13);
    }

    #[test]
    fn single_center_lemma_is_trivial() {
        let sys = pendulum_like();
        let cs =
            CenterSet::new(&sys, vec![DVector::zeros(2)], vec![DMatrix::identity(2, 2)]).unwrap();
        let rep = lemma1_check(&cs, &sys).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.max_deviation, 0.0);
        assert_eq!(rep.worst_pair, None);
    }

    #[test]
    fn rejects_indefinite_controlled_inertia() {
        let sys = pendulum_like();
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = CenterSet::new(&sys, vec![DVector::zeros(2)], vec![bad]).unwrap_err();
        assert!(matches!(err, Error::Center { index: 0, .. }));
    }

    #[test]
    fn report_statistics() {
        let pts = vec![DVector::zeros(1), DVector::zeros(1)];
        let res = vec![DVector::from_vec(vec![3.0]), DVector::from_vec(vec![-4.0])];
        let rep = MatchingReport::from_residuals(pts, res);
        assert_eq!(rep.max_norm, 4.0);
        assert_eq!(rep.argmax, 1);
        assert_eq!(rep.mean_norm, 3.5);
        assert!((rep.rms_norm - 12.5f64.sqrt()).abs() < 1e-15);
    }
}
