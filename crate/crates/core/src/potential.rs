//! Controlled potential energy `V_c(q)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::system::{ScalarFn, VectorFn};

/// The designed closed-loop potential, whose minimum sits at the target equilibrium.
pub trait ControlledPotential: Send + Sync {
    fn value(&self, q: &DVector<f64>) -> f64;
    fn grad(&self, q: &DVector<f64>) -> DVector<f64>;
}

/// `V_c` from a pair of closures.
#[derive(Clone)]
pub struct FnPotential {
    value: ScalarFn,
    grad: VectorFn,
}

impl fmt::Debug for FnPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnPotential")
    }
}

impl FnPotential {
    pub fn new(
        value: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            grad: Arc::new(grad),
        }
    }

    /// `V_c = V`, the trivial (unshaped) choice.
    pub fn from_system(sys: &crate::ElSystem) -> Self {
        let (s1, s2) = (sys.clone(), sys.clone());
        Self::new(move |q| s1.potential(q), move |q| s2.potential_grad(q))
    }
}

impl ControlledPotential for FnPotential {
    fn value(&self, q: &DVector<f64>) -> f64 {
        (self.value)(q)
    }
    fn grad(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.grad)(q)
    }
}

impl<T: ControlledPotential + ?Sized> ControlledPotential for Arc<T> {
    fn value(&self, q: &DVector<f64>) -> f64 {
        (**self).value(q)
    }
    fn grad(&self, q: &DVector<f64>) -> DVector<f64> {
        (**self).grad(q)
    }
}
