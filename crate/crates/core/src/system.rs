//! Underactuated Euler-Lagrange systems `M(q)q̈ + C(q,q̇)q̇ + ∇V(q) = G u`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Factor};

pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type FlowFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Step of the central differences used when no analytic `∂(Mq̇)/∂q` is given.
pub const FD_STEP: f64 = 1e-6;

/// Generalized coordinates and velocities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl State {
    pub fn new(q: DVector<f64>, qd: DVector<f64>) -> Self {
        Self { q, qd }
    }

    pub fn from_slices(q: &[f64], qd: &[f64]) -> Self {
        Self {
            q: DVector::from_column_slice(q),
            qd: DVector::from_column_slice(qd),
        }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qd: DVector::zeros(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|x| x.is_finite())
    }

    /// Euclidean norm of `(q − q*, q̇)`.
    pub fn distance_to(&self, q_star: &DVector<f64>) -> f64 {
        ((&self.q - q_star).norm_squared() + self.qd.norm_squared()).sqrt()
    }
}

/// Axis-aligned box of configurations where the model is meant to be used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Workspace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len("workspace bounds", lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::Config(
                "workspace lower bound exceeds upper bound".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, q: &DVector<f64>) -> bool {
        q.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (l, u))| *l <= *x && *x <= *u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.lower.len(),
            self.lower.iter().zip(&self.upper).map(|(&l, &u)| {
                if l == u {
                    l
                } else {
                    rng.random_range(l..=u)
                }
            }),
        )
    }
}

/// An `n`-DoF mechanical system with `m < n` actuators.
///
/// All model quantities are evaluation closures, so a system is immutable
/// after construction and can be shared between threads.
#[derive(Clone)]
pub struct ElSystem {
    n: usize,
    m: usize,
    mass_matrix: MatrixFn,
    mass_flow: Option<FlowFn>,
    potential: ScalarFn,
    potential_grad: VectorFn,
    input: DMatrix<f64>,
    annihilator: DMatrix<f64>,
    input_left_inverse: DMatrix<f64>,
    workspace: Option<Workspace>,
}

impl fmt::Debug for ElSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ElSystem")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("analytic_mass_flow", &self.mass_flow.is_some())
            .field("input", &self.input)
            .field("annihilator", &self.annihilator)
            .field("workspace", &self.workspace)
            .finish()
    }
}

pub struct ElSystemBuilder {
    n: usize,
    m: usize,
    mass_matrix: Option<MatrixFn>,
    mass_flow: Option<FlowFn>,
    potential: Option<ScalarFn>,
    potential_grad: Option<VectorFn>,
    input: Option<DMatrix<f64>>,
    annihilator: Option<DMatrix<f64>>,
    workspace: Option<Workspace>,
}

impl ElSystemBuilder {
    pub fn mass_matrix(
        mut self,
        f: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.mass_matrix = Some(Arc::new(f));
        self
    }

    /// Analytic `∂(M(q)q̇)/∂q`; column `j` is the derivative with respect to `q_j`.
    pub fn mass_flow(
        mut self,
        f: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.mass_flow = Some(Arc::new(f));
        self
    }

    pub fn potential(mut self, f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        self.potential = Some(Arc::new(f));
        self
    }

    pub fn potential_grad(
        mut self,
        f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.potential_grad = Some(Arc::new(f));
        self
    }

    pub fn input_matrix(mut self, g: DMatrix<f64>) -> Self {
        self.input = Some(g);
        self
    }

    pub fn left_annihilator(mut self, g_perp: DMatrix<f64>) -> Self {
        self.annihilator = Some(g_perp);
        self
    }

    pub fn workspace(mut self, ws: Workspace) -> Self {
        self.workspace = Some(ws);
        self
    }

    pub fn build(self) -> Result<ElSystem> {
        let (n, m) = (self.n, self.m);
        let missing = |what: &str| Error::InvalidSystem(format!("{what} not provided"));
        let mass_matrix = self.mass_matrix.ok_or_else(|| missing("mass matrix"))?;
        let potential = self.potential.ok_or_else(|| missing("potential"))?;
        let potential_grad = self
            .potential_grad
            .ok_or_else(|| missing("potential gradient"))?;
        let input = self.input.ok_or_else(|| missing("input matrix"))?;
        let annihilator = self
            .annihilator
            .ok_or_else(|| missing("left annihilator"))?;

        if m == 0 || m >= n {
            return Err(Error::InvalidSystem(format!(
                "need 0 < m < n for an underactuated system, got n = {n}, m = {m}"
            )));
        }
        if input.shape() != (n, m) {
            return Err(Error::Dimension {
                context: "input matrix G",
                expected: format!("{n}x{m}"),
                actual: format!("{}x{}", input.nrows(), input.ncols()),
            });
        }
        if annihilator.shape() != (n - m, n) {
            return Err(Error::Dimension {
                context: "left annihilator",
                expected: format!("{}x{n}", n - m),
                actual: format!("{}x{}", annihilator.nrows(), annihilator.ncols()),
            });
        }
        let product = &annihilator * &input;
        if product.iter().any(|&x| x != 0.0) {
            return Err(Error::InvalidSystem(format!(
                "left annihilator does not annihilate G (max |G⊥G| = {:e})",
                product.amax()
            )));
        }
        if linalg::rank(&input) != m {
            return Err(Error::InvalidSystem(
                "input matrix is rank deficient".into(),
            ));
        }
        if linalg::rank(&annihilator) != n - m {
            return Err(Error::InvalidSystem(
                "left annihilator is rank deficient".into(),
            ));
        }
        if let Some(ws) = &self.workspace {
            check_len("workspace dimension", n, ws.lower.len())?;
        }
        let input_left_inverse = linalg::left_inverse(&input)
            .ok_or_else(|| Error::InvalidSystem("input matrix is rank deficient".into()))?;

        Ok(ElSystem {
            n,
            m,
            mass_matrix,
            mass_flow: self.mass_flow,
            potential,
            potential_grad,
            input,
            annihilator,
            input_left_inverse,
            workspace: self.workspace,
        })
    }
}

impl ElSystem {
    pub fn builder(n: usize, m: usize) -> ElSystemBuilder {
        ElSystemBuilder {
            n,
            m,
            mass_matrix: None,
            mass_flow: None,
            potential: None,
            potential_grad: None,
            input: None,
            annihilator: None,
            workspace: None,
        }
    }

    pub fn dof(&self) -> usize {
        self.n
    }

    pub fn inputs(&self) -> usize {
        self.m
    }

    pub fn input_matrix(&self) -> &DMatrix<f64> {
        &self.input
    }

    pub fn annihilator(&self) -> &DMatrix<f64> {
        &self.annihilator
    }

    /// `(GᵀG)⁻¹Gᵀ`, precomputed from a QR factorization of `G`.
    pub fn input_left_inverse(&self) -> &DMatrix<f64> {
        &self.input_left_inverse
    }

    pub fn workspace(&self) -> Option<&Workspace> {
        self.workspace.as_ref()
    }

    pub fn in_workspace(&self, q: &DVector<f64>) -> bool {
        self.workspace.as_ref().is_none_or(|ws| ws.contains(q))
    }

    pub fn has_analytic_mass_flow(&self) -> bool {
        self.mass_flow.is_some()
    }

    pub fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.mass_matrix)(q)
    }

    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        (self.potential)(q)
    }

    pub fn potential_grad(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.potential_grad)(q)
    }

    /// `∂(M(q)q̇)/∂q`, analytic when supplied, otherwise central differences.
    pub fn mass_flow(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        match &self.mass_flow {
            Some(f) => f(q, qd),
            None => self.mass_flow_fd(q, qd),
        }
    }

    /// Central-difference `∂(M(q)q̇)/∂q` with step [`FD_STEP`].
    pub fn mass_flow_fd(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        mass_flow_fd(|x| self.mass_matrix(x), q, qd)
    }

    fn check_state(&self, s: &State) -> Result<()> {
        check_len("state q", self.n, s.q.len())?;
        check_len("state q̇", self.n, s.qd.len())
    }

    /// `C(q,q̇) = ∂(Mq̇)/∂q − ½(∂(Mq̇)/∂q)ᵀ`.
    pub fn coriolis(&self, s: &State) -> Result<DMatrix<f64>> {
        self.check_state(s)?;
        Ok(coriolis_from_flow(&self.mass_flow(&s.q, &s.qd)))
    }

    /// `q̈ = M⁻¹(G u − C q̇ − ∇V)`.
    pub fn open_loop_accel(&self, s: &State, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(s)?;
        check_len("input u", self.m, u.len())?;
        let mass = Factor::new(&self.mass_matrix(&s.q), "mass matrix M(q)")?;
        let c = coriolis_from_flow(&self.mass_flow(&s.q, &s.qd));
        let rhs = &self.input * u - c * &s.qd - self.potential_grad(&s.q);
        Ok(mass.solve_vec(&rhs))
    }

    /// `½ q̇ᵀM(q)q̇ + V(q)`.
    pub fn total_energy(&self, s: &State) -> f64 {
        let m = self.mass_matrix(&s.q);
        0.5 * s.qd.dot(&(m * &s.qd)) + self.potential(&s.q)
    }

    /// Largest deviation between the analytic and finite-difference mass flow
    /// over `samples` random states drawn from the workspace.
    pub fn mass_flow_consistency<R: Rng + ?Sized>(&self, rng: &mut R, samples: usize) -> f64 {
        let ws = self.workspace.clone().unwrap_or_else(|| Workspace {
            lower: vec![-1.0; self.n],
            upper: vec![1.0; self.n],
        });
        (0..samples)
            .map(|_| {
                let q = ws.sample(rng);
                let qd = DVector::from_fn(self.n, |_, _| rng.random_range(-1.0..=1.0));
                (self.mass_flow(&q, &qd) - self.mass_flow_fd(&q, &qd)).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// `D − ½Dᵀ` for a mass-flow matrix `D = ∂(Mq̇)/∂q`.
pub fn coriolis_from_flow(d: &DMatrix<f64>) -> DMatrix<f64> {
    d - d.transpose() * 0.5
}

/// Central differences of `q ↦ M(q)q̇`, column `j` being `∂/∂q_j`.
pub fn mass_flow_fd(
    mass: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> DMatrix<f64> {
    let n = q.len();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[j] += FD_STEP;
        qm[j] -= FD_STEP;
        let col = (mass(&qp) * qd - mass(&qm) * qd) / (2.0 * FD_STEP);
        out.set_column(j, &col);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_system() -> ElSystem {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        ElSystem::builder(2, 1)
            .mass_matrix(move |_| m.clone())
            .potential(|q| 0.5 * q.norm_squared())
            .potential_grad(|q| q.clone())
            .input_matrix(DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
            .left_annihilator(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .build()
            .unwrap()
    }

    #[test]
    fn constant_mass_gives_zero_coriolis() {
        let sys = constant_system();
        let s = State::from_slices(&[0.3, -1.0], &[2.0, 0.7]);
        assert_eq!(sys.coriolis(&s).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn rest_at_critical_point_has_zero_acceleration() {
        let sys = constant_system();
        let s = State::from_slices(&[0.0, 0.0], &[0.0, 0.0]);
        let a = sys.open_loop_accel(&s, &DVector::zeros(1)).unwrap();
        assert_eq!(a, DVector::zeros(2));
    }

    #[test]
    fn energy_at_rest_is_potential() {
        let sys = constant_system();
        let s = State::from_slices(&[0.4, 1.2], &[0.0, 0.0]);
        assert_eq!(sys.total_energy(&s), sys.potential(&s.q));
    }

    #[test]
    fn rejects_non_annihilating_g_perp() {
        let err = ElSystem::builder(2, 1)
            .mass_matrix(|_| DMatrix::identity(2, 2))
            .potential(|_| 0.0)
            .potential_grad(|_| DVector::zeros(2))
            .input_matrix(DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
            .left_annihilator(DMatrix::from_row_slice(1, 2, &[1.0, 1e-3]))
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::InvalidSystem(_)));
    }

    #[test]
    fn rejects_fully_actuated() {
        let err = ElSystem::builder(2, 2)
            .mass_matrix(|_| DMatrix::identity(2, 2))
            .potential(|_| 0.0)
            .potential_grad(|_| DVector::zeros(2))
            .input_matrix(DMatrix::identity(2, 2))
            .left_annihilator(DMatrix::zeros(0, 2))
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::InvalidSystem(_)));
    }

    #[test]
    fn wrong_state_dimension_is_structural_error() {
        let sys = constant_system();
        let s = State::from_slices(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]);
        assert!(matches!(sys.coriolis(&s), Err(Error::Dimension { .. })));
    }

    #[test]
    fn singular_mass_reports_condition() {
        let sys = ElSystem::builder(2, 1)
            .mass_matrix(|_| DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]))
            .potential(|_| 0.0)
            .potential_grad(|_| DVector::zeros(2))
            .input_matrix(DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
            .left_annihilator(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .build()
            .unwrap();
        let s = State::from_slices(&[0.0, 0.0], &[0.0, 0.0]);
        assert!(matches!(
            sys.open_loop_accel(&s, &DVector::zeros(1)),
            Err(Error::Singular { .. })
        ));
    }
}
