//! Fitting the RBF controlled inertia to the potential matching condition.
//!
//! Free parameters are `log εᵢ` and the upper triangle of every `M̃_ci`; the
//! biases are eliminated through `M_cbi = M_ci − M̃_ci`. The residual vector
//! stacks the matching residual at every grid point, a penalty on negative
//! eigenvalues of `M̂_c` at every grid point, an anchor tying `M̂_c(qᵢ)` to
//! `M_ci` at every center, and a small ridge on `M̃_ci`.
//!
//! The anchor matters: because every bias contributes everywhere, nothing
//! else ties `M̂_c(qᵢ)` to `M_ci`, and the matching residual alone has a
//! shallow valley along which `M̂_c` keeps growing. Along it the fit looks
//! better while the damping-injected closed loop gets arbitrarily sluggish.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inertia::ControlledInertia;
use crate::linalg::{self, Factor};
use crate::lm::{self, LeastSquaresProblem, LmConfig, LmReport, Termination};
use crate::matching::{lemma1_check, CenterSet, MatchingReport};
use crate::rbf::RbfInertiaModel;
use crate::system::ElSystem;

/// One axis of a tensor-product sample grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridAxis {
    Fixed(f64),
    Range {
        lower: f64,
        upper: f64,
        count: usize,
    },
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            GridAxis::Fixed(v) => vec![v],
            GridAxis::Range {
                lower,
                upper,
                count,
            } => (0..count)
                .map(|k| {
                    if k + 1 == count {
                        upper
                    } else {
                        lower + (upper - lower) * k as f64 / (count - 1) as f64
                    }
                })
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            GridAxis::Fixed(v) if v.is_finite() => Ok(()),
            GridAxis::Range {
                lower,
                upper,
                count,
            } if count >= 2 && lower < upper && upper.is_finite() && lower.is_finite() => Ok(()),
            _ => Err(Error::Config(format!(
                "invalid grid axis {self:?}: sampled axes need count >= 2 and lower < upper"
            ))),
        }
    }

    fn extent(&self) -> f64 {
        match *self {
            GridAxis::Fixed(_) => 0.0,
            GridAxis::Range { lower, upper, .. } => upper - lower,
        }
    }
}

/// Uniform tensor-product grid over a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub axes: Vec<GridAxis>,
}

impl SampleGrid {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        let g = Self { axes };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::Config("sample grid has no axes".into()));
        }
        self.axes.iter().try_for_each(GridAxis::validate)
    }

    /// Grid points, the last axis varying fastest.
    pub fn points(&self) -> Vec<DVector<f64>> {
        let values: Vec<Vec<f64>> = self.axes.iter().map(GridAxis::values).collect();
        let mut out = vec![Vec::new()];
        for vals in &values {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    vals.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        out.into_iter().map(DVector::from_vec).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub grid: SampleGrid,
    /// Coordinates entering the RBF distance; empty means all.
    pub active: Vec<usize>,
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Weight on `min(λ_min(M̂_c(q)) − pd_margin, 0)` at every grid point.
    pub pd_penalty: f64,
    /// Eigenvalue floor the penalty pushes `M̂_c` above, so that a converged
    /// fit is strictly positive definite rather than marginally so.
    pub pd_margin: f64,
    /// Weight on the relative deviation of `M̂_c(qᵢ)` from `M_ci` at every center.
    pub anchor: f64,
    /// Weight of the quadratic ridge on `M̃_ci` entries (tie-breaking).
    pub ridge: f64,
    /// Multipliers applied to the initial widths; the optimizer runs once per
    /// multiplier and the lowest final cost wins (earliest on ties).
    pub width_starts: Vec<f64>,
    /// Stop once the full residual vector is this small.
    pub residual_tol: f64,
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            grid: SampleGrid {
                axes: vec![GridAxis::Range {
                    lower: -1.0,
                    upper: 1.0,
                    count: 21,
                }],
            },
            active: Vec::new(),
            max_iterations: 2000,
            initial_damping: 1e-3,
            pd_penalty: 1e3,
            pd_margin: 1e-3,
            anchor: 0.03,
            ridge: 1e-8,
            width_starts: vec![0.5, 1.0, 2.0, 4.0],
            residual_tol: 1e-12,
            ftol: 1e-15,
            xtol: 1e-15,
            gtol: 1e-15,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        self.grid.validate()?;
        if self.grid.axes.len() != n {
            return Err(Error::Config(format!(
                "sample grid has {} axes, system has {n} coordinates",
                self.grid.axes.len()
            )));
        }
        if self.active.iter().any(|&k| k >= n) {
            return Err(Error::Config(format!(
                "active coordinates {:?} out of range",
                self.active
            )));
        }
        for (name, v) in [
            ("pd_penalty", self.pd_penalty),
            ("pd_margin", self.pd_margin),
            ("anchor", self.anchor),
            ("ridge", self.ridge),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if self.width_starts.is_empty()
            || self
                .width_starts
                .iter()
                .any(|&s| !(s > 0.0 && s.is_finite()))
        {
            return Err(Error::Config(format!(
                "width_starts must be a nonempty list of positive multipliers, got {:?}",
                self.width_starts
            )));
        }
        self.lm_config().validate()
    }

    fn lm_config(&self) -> LmConfig {
        LmConfig {
            max_iterations: self.max_iterations,
            initial_damping: self.initial_damping,
            ftol: self.ftol,
            xtol: self.xtol,
            gtol: self.gtol,
            residual_tol: self.residual_tol,
        }
    }

    fn active_coords(&self, n: usize) -> Vec<usize> {
        if self.active.is_empty() {
            (0..n).collect()
        } else {
            self.active.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: RbfInertiaModel,
    pub initial: RbfInertiaModel,
    pub before: MatchingReport,
    pub after: MatchingReport,
    /// `false` when the optimizer hit its iteration cap; the model is then
    /// the best iterate found.
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub cost: f64,
}

/// Initial widths: `1/(2·d_min)` with `d_min` the distance to the nearest
/// other center; a single center gets `1/extent` of the active grid box.
pub fn initial_widths(cs: &CenterSet, active: &[usize], grid: &SampleGrid) -> Result<Vec<f64>> {
    let dist = |a: &DVector<f64>, b: &DVector<f64>| {
        active
            .iter()
            .map(|&k| (a[k] - b[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    if cs.len() == 1 {
        let extent = active
            .iter()
            .map(|&k| grid.axes[k].extent().powi(2))
            .sum::<f64>()
            .sqrt();
        return Ok(vec![if extent > 0.0 { 1.0 / extent } else { 1.0 }]);
    }
    cs.centers()
        .iter()
        .enumerate()
        .map(|(i, qi)| {
            let d = cs
                .centers()
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, qj)| dist(qi, qj))
                .fold(f64::INFINITY, f64::min);
            if d > 0.0 {
                Ok(1.0 / (2.0 * d))
            } else {
                Err(Error::Center {
                    index: i,
                    reason: "coincides with another center in the active coordinates".into(),
                })
            }
        })
        .collect()
}

/// Fits `M̂_c` so that the potential matching residual is small over the grid.
pub fn fit(
    cs: &CenterSet,
    sys: &ElSystem,
    vc_grad: &(dyn Fn(&DVector<f64>) -> DVector<f64> + Sync),
    cfg: &FitConfig,
) -> Result<FitOutcome> {
    let n = sys.dof();
    cfg.validate(n)?;
    if cs.dim() != n {
        return Err(Error::Dimension {
            context: "center set",
            expected: n.to_string(),
            actual: cs.dim().to_string(),
        });
    }
    let lemma = lemma1_check(cs, sys)?;
    if !lemma.passed {
        return Err(Error::Config(format!(
            "center set fails the consistency check (max deviation {:.3e} at pair {:?})",
            lemma.max_deviation, lemma.worst_pair
        )));
    }
    let active = cfg.active_coords(n);
    let widths = initial_widths(cs, &active, &cfg.grid)?;
    let initial =
        RbfInertiaModel::from_center_set(cs, widths, cs.controlled().to_vec(), active.clone())?;

    let points = cfg.grid.points();
    let problem = FitProblem::new(sys, cs, vc_grad, &points, active, cfg);
    let before = MatchingReport::evaluate(sys, &initial, vc_grad, points.clone())?
        .with_lemma1(lemma.clone());

    let runs = cfg
        .width_starts
        .par_iter()
        .map(|&k| {
            let start = initial.with_widths(initial.widths().iter().map(|w| w * k).collect())?;
            lm::minimize(&problem, problem.pack(&start), &cfg.lm_config())
        })
        .collect::<Result<Vec<_>>>()?;
    let LmReport {
        params,
        cost,
        iterations,
        termination,
        ..
    } = runs
        .into_iter()
        .reduce(|best, run| if run.cost < best.cost { run } else { best })
        .expect("width_starts is nonempty");
    let model = problem.unpack(&params)?;
    if !termination.converged() {
        log::warn!("inertia fit stopped after {iterations} iterations without converging; returning best iterate");
    }

    let violations: Vec<DVector<f64>> = points
        .iter()
        .filter(|q| !(linalg::min_eigen(&model.evaluate(q)).0 > 0.0))
        .cloned()
        .collect();
    if !violations.is_empty() {
        return Err(Error::NotPositiveDefinite { points: violations });
    }
    let after = MatchingReport::evaluate(sys, &model, vc_grad, points)?.with_lemma1(lemma);
    Ok(FitOutcome {
        model,
        initial,
        before,
        after,
        converged: termination.converged(),
        termination,
        iterations,
        cost,
    })
}

/// Grid data that does not depend on the parameters.
struct GridPoint {
    q: DVector<f64>,
    /// `G⊥ M(q)`.
    gm: DMatrix<f64>,
    /// `G⊥ ∇V(q)`.
    gv: DVector<f64>,
    grad_vc: DVector<f64>,
}

struct FitProblem<'a> {
    cs: &'a CenterSet,
    grid: Vec<GridPoint>,
    active: Vec<usize>,
    n: usize,
    k: usize,
    pd_penalty: f64,
    pd_margin: f64,
    anchor: f64,
    /// `Lᵢ⁻¹` for the Cholesky factor `M_ci = LᵢLᵢᵀ` of every center.
    anchor_factors: Vec<DMatrix<f64>>,
    ridge_sqrt: f64,
    pairs: Vec<(usize, usize)>,
}

impl<'a> FitProblem<'a> {
    fn new(
        sys: &ElSystem,
        cs: &'a CenterSet,
        vc_grad: &(dyn Fn(&DVector<f64>) -> DVector<f64> + Sync),
        points: &[DVector<f64>],
        active: Vec<usize>,
        cfg: &FitConfig,
    ) -> Self {
        let gp = sys.annihilator();
        let grid = points
            .iter()
            .map(|q| GridPoint {
                q: q.clone(),
                gm: gp * sys.mass_matrix(q),
                gv: gp * sys.potential_grad(q),
                grad_vc: vc_grad(q),
            })
            .collect();
        let n = sys.dof();
        Self {
            cs,
            grid,
            active,
            n,
            k: sys.dof() - sys.inputs(),
            pd_penalty: cfg.pd_penalty,
            pd_margin: cfg.pd_margin,
            anchor: cfg.anchor,
            anchor_factors: cs
                .controlled()
                .iter()
                .map(|m| {
                    let l = m
                        .clone()
                        .cholesky()
                        .expect("center inertias are validated positive definite")
                        .l();
                    l.try_inverse()
                        .expect("triangular factor of a positive definite matrix is invertible")
                })
                .collect(),
            ridge_sqrt: cfg.ridge.sqrt(),
            pairs: linalg::vech_indices(n),
        }
    }

    fn r(&self) -> usize {
        self.cs.len()
    }

    fn per_center(&self) -> usize {
        1 + self.pairs.len()
    }

    fn pack(&self, model: &RbfInertiaModel) -> DVector<f64> {
        let r = self.r();
        let mut p = DVector::zeros(r * self.per_center());
        for i in 0..r {
            p[i] = model.widths()[i].ln();
            for (t, &(a, b)) in self.pairs.iter().enumerate() {
                p[r + i * self.pairs.len() + t] = model.weights()[i][(a, b)];
            }
        }
        p
    }

    fn unpack(&self, p: &DVector<f64>) -> Result<RbfInertiaModel> {
        let r = self.r();
        let widths = (0..r).map(|i| p[i].exp()).collect();
        let weights = (0..r)
            .map(|i| {
                let mut w = DMatrix::zeros(self.n, self.n);
                for (t, &(a, b)) in self.pairs.iter().enumerate() {
                    let v = p[r + i * self.pairs.len() + t];
                    w[(a, b)] = v;
                    w[(b, a)] = v;
                }
                w
            })
            .collect();
        RbfInertiaModel::from_center_set(self.cs, widths, weights, self.active.clone())
    }

    fn rows(&self) -> usize {
        self.grid.len() * (self.k + 1) + 2 * self.r() * self.pairs.len()
    }

    /// Anchor rows `anchor·vech(Lᵢ⁻¹(M̂_c(qᵢ) − M_ci)Lᵢ⁻ᵀ)` with `M_ci = LᵢLᵢᵀ`,
    /// and their Jacobian. Measuring the deviation relative to `M_ci` keeps
    /// the anchor commensurate across centers whose inertias differ in scale.
    fn anchor_rows(
        &self,
        model: &RbfInertiaModel,
        with_jac: bool,
    ) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let r = self.r();
        let np = self.pairs.len();
        let mut res = DVector::zeros(r * np);
        let mut jac = with_jac.then(|| DMatrix::zeros(r * np, r * self.per_center()));
        let whiten = |i: usize, m: &DMatrix<f64>| {
            &self.anchor_factors[i] * m * self.anchor_factors[i].transpose()
        };
        for (i, qi) in self.cs.centers().iter().enumerate() {
            let h = model.basis(qi);
            let diff = whiten(
                i,
                &(model.evaluate_with_basis(&h) - &self.cs.controlled()[i]),
            );
            for (t, &(a, b)) in self.pairs.iter().enumerate() {
                res[i * np + t] = self.anchor * diff[(a, b)];
            }
            let Some(jac) = jac.as_mut() else { continue };
            for j in 0..r {
                let eps = model.widths()[j];
                let dh = -2.0 * eps * eps * model.distance_sq(j, qi) * h[j];
                let dw = whiten(i, &model.weights()[j]);
                for (t, &(a, b)) in self.pairs.iter().enumerate() {
                    jac[(i * np + t, j)] = self.anchor * dw[(a, b)] * dh;
                }
                for (t2, &(c, d)) in self.pairs.iter().enumerate() {
                    let mut e = DMatrix::zeros(self.n, self.n);
                    e[(c, d)] = h[j] - 1.0;
                    e[(d, c)] = h[j] - 1.0;
                    let de = whiten(i, &e);
                    for (t, &(a, b)) in self.pairs.iter().enumerate() {
                        jac[(i * np + t, r + j * np + t2)] = self.anchor * de[(a, b)];
                    }
                }
            }
        }
        (res, jac)
    }

    /// Residual rows and (optionally) Jacobian rows for one grid point.
    fn point_rows(
        &self,
        model: &RbfInertiaModel,
        g: &GridPoint,
        with_jac: bool,
    ) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let h = model.basis(&g.q);
        let mc = model.evaluate_with_basis(&h);
        let f = Factor::new(&mc, "fitted controlled inertia")?;
        let x = f.solve_vec(&g.grad_vc);
        let mut res = DVector::zeros(self.k + 1);
        res.rows_mut(0, self.k).copy_from(&(&g.gv - &g.gm * &x));
        let (lam, v) = linalg::min_eigen(&mc);
        let pd_active = lam < self.pd_margin;
        if pd_active {
            res[self.k] = self.pd_penalty * (lam - self.pd_margin);
        }
        if !with_jac {
            return Ok((res, None));
        }
        // dε̄ = Σ dM̂ X with Σ = G⊥ M M̂⁻¹ ; dλ = vᵀ dM̂ v.
        let sigma = linalg::right_solve(&g.gm, &f);
        let r = self.r();
        let mut jac = DMatrix::zeros(self.k + 1, r * self.per_center());
        let mut put = |col: usize, dm: &DMatrix<f64>| {
            let d = &sigma * (dm * &x);
            jac.view_mut((0, col), (self.k, 1)).copy_from(&d);
            if pd_active {
                jac[(self.k, col)] = self.pd_penalty * v.dot(&(dm * &v));
            }
        };
        for (i, &hi) in h.iter().enumerate().take(r) {
            let eps = model.widths()[i];
            let d2 = model.distance_sq(i, &g.q);
            put(i, &(&model.weights()[i] * (-2.0 * eps * eps * d2 * hi)));
            for (t, &(a, b)) in self.pairs.iter().enumerate() {
                let mut e = DMatrix::zeros(self.n, self.n);
                e[(a, b)] = hi - 1.0;
                e[(b, a)] = hi - 1.0;
                put(r + i * self.pairs.len() + t, &e);
            }
        }
        Ok((res, Some(jac)))
    }
}

impl LeastSquaresProblem for FitProblem<'_> {
    fn residuals(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let model = self.unpack(p)?;
        let blocks = self
            .grid
            .par_iter()
            .map(|g| self.point_rows(&model, g, false).map(|(r, _)| r))
            .collect::<Result<Vec<_>>>()?;
        let mut out = DVector::zeros(self.rows());
        for (gi, b) in blocks.iter().enumerate() {
            out.rows_mut(gi * (self.k + 1), self.k + 1).copy_from(b);
        }
        let mut base = self.grid.len() * (self.k + 1);
        let (anchor, _) = self.anchor_rows(&model, false);
        out.rows_mut(base, anchor.len()).copy_from(&anchor);
        base += anchor.len();
        let r = self.r();
        for j in 0..r * self.pairs.len() {
            out[base + j] = self.ridge_sqrt * p[r + j];
        }
        Ok(out)
    }

    fn jacobian(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
        let model = self.unpack(p)?;
        let blocks = self
            .grid
            .par_iter()
            .map(|g| {
                self.point_rows(&model, g, true)
                    .map(|(_, j)| j.expect("jacobian requested"))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = DMatrix::zeros(self.rows(), p.len());
        for (gi, b) in blocks.iter().enumerate() {
            out.view_mut((gi * (self.k + 1), 0), (self.k + 1, p.len()))
                .copy_from(b);
        }
        let mut base = self.grid.len() * (self.k + 1);
        let (_, anchor) = self.anchor_rows(&model, true);
        let anchor = anchor.expect("jacobian requested");
        out.view_mut((base, 0), anchor.shape()).copy_from(&anchor);
        base += anchor.nrows();
        let r = self.r();
        for j in 0..r * self.pairs.len() {
            out[(base + j, r + j)] = self.ridge_sqrt;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_axis_hits_both_ends() {
        let v = GridAxis::Range {
            lower: -1.309,
            upper: 1.309,
            count: 121,
        }
        .values();
        assert_eq!(v.len(), 121);
        assert_eq!(v[0], -1.309);
        assert_eq!(v[120], 1.309);
        assert!(v[60].abs() < 1e-15);
    }

    #[test]
    fn grid_points_are_tensor_product() {
        let g = SampleGrid::new(vec![
            GridAxis::Range {
                lower: 0.0,
                upper: 1.0,
                count: 3,
            },
            GridAxis::Fixed(5.0),
        ])
        .unwrap();
        let pts = g.points();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[2], DVector::from_vec(vec![1.0, 5.0]));
    }

    #[test]
    fn rejects_single_sample_axis() {
        let err = SampleGrid::new(vec![GridAxis::Range {
            lower: 0.0,
            upper: 1.0,
            count: 1,
        }])
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let sys = ElSystem::builder(2, 1)
            .mass_matrix(|q| DMatrix::from_row_slice(2, 2, &[1.0, q[0].cos(), q[0].cos(), 6.0]))
            .potential(|q| 9.8 * q[0].cos())
            .potential_grad(|q| DVector::from_vec(vec![-9.8 * q[0].sin(), 0.0]))
            .input_matrix(DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
            .left_annihilator(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .build()
            .unwrap();
        let centers = vec![
            DVector::from_vec(vec![0.5, 0.0]),
            DVector::from_vec(vec![-0.5, 0.0]),
        ];
        let mcs = vec![
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.5, -0.1, -0.1, 2.0]),
        ];
        let cs = CenterSet::new(&sys, centers, mcs).unwrap();
        let cfg = FitConfig {
            grid: SampleGrid::new(vec![
                GridAxis::Range {
                    lower: -1.0,
                    upper: 1.0,
                    count: 7,
                },
                GridAxis::Fixed(0.0),
            ])
            .unwrap(),
            active: vec![0],
            anchor: 2.0,
            ridge: 1e-4,
            ..FitConfig::default()
        };
        let vc_grad =
            |q: &DVector<f64>| DVector::from_vec(vec![q[0] + 0.2 * q[0].sin(), 0.3 * q[0]]);
        let points = cfg.grid.points();
        let prob = FitProblem::new(&sys, &cs, &vc_grad, &points, vec![0], &cfg);
        let model = RbfInertiaModel::from_center_set(
            &cs,
            vec![0.8, 1.3],
            vec![
                DMatrix::from_row_slice(2, 2, &[0.7, 0.2, 0.2, 0.4]),
                DMatrix::from_row_slice(2, 2, &[1.1, -0.3, -0.3, 0.9]),
            ],
            vec![0],
        )
        .unwrap();
        let p = prob.pack(&model);
        let jac = prob.jacobian(&p).unwrap();
        let h = 1e-6;
        for j in 0..p.len() {
            let mut pp = p.clone();
            let mut pm = p.clone();
            pp[j] += h;
            pm[j] -= h;
            let col = (prob.residuals(&pp).unwrap() - prob.residuals(&pm).unwrap()) / (2.0 * h);
            assert!((col - jac.column(j)).amax() < 1e-7, "column {j}");
        }
    }
}
