//! Controlled inertia evaluators: anything that yields `M_c(q)` and its flow.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::system::{coriolis_from_flow, mass_flow_fd, ElSystem, FlowFn, MatrixFn};

/// A (possibly approximate) controlled inertia matrix `M̂_c(q)`.
pub trait ControlledInertia: Send + Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, q: &DVector<f64>) -> DMatrix<f64>;

    /// `∂(M̂_c(q)q̇)/∂q`, column `j` being the derivative with respect to `q_j`.
    fn mass_flow(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64>;

    /// `Ĉ_c = ∂(M̂_c q̇)/∂q − ½(∂(M̂_c q̇)/∂q)ᵀ`.
    fn coriolis(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        coriolis_from_flow(&self.mass_flow(q, qd))
    }
}

/// Controlled inertia given in closed form.
#[derive(Clone)]
pub struct ExactInertia {
    n: usize,
    eval: MatrixFn,
    flow: Option<FlowFn>,
}

impl fmt::Debug for ExactInertia {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExactInertia")
            .field("n", &self.n)
            .field("analytic_flow", &self.flow.is_some())
            .finish()
    }
}

impl ExactInertia {
    /// Closed-form `M_c(q)`; the flow falls back to central differences.
    pub fn new(
        n: usize,
        eval: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            eval: Arc::new(eval),
            flow: None,
        }
    }

    pub fn with_flow(
        mut self,
        flow: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.flow = Some(Arc::new(flow));
        self
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        Self::new(n, move |_| m.clone()).with_flow(move |_, _| DMatrix::zeros(n, n))
    }

    /// `α·M(q)` for a constant `α`, sharing the system's mass flow.
    pub fn scaled(sys: &ElSystem, alpha: f64) -> Self {
        let (s1, s2) = (sys.clone(), sys.clone());
        Self::new(sys.dof(), move |q| s1.mass_matrix(q) * alpha)
            .with_flow(move |q, qd| s2.mass_flow(q, qd) * alpha)
    }
}

impl ControlledInertia for ExactInertia {
    fn dim(&self) -> usize {
        self.n
    }

    fn evaluate(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.eval)(q)
    }

    fn mass_flow(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        match &self.flow {
            Some(f) => f(q, qd),
            None => mass_flow_fd(|x| (self.eval)(x), q, qd),
        }
    }
}

impl<T: ControlledInertia + ?Sized> ControlledInertia for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn evaluate(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (**self).evaluate(q)
    }
    fn mass_flow(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        (**self).mass_flow(q, qd)
    }
}
