//! Energy-shaping control law: gyroscopic and dissipative forces, the shaping
//! term `u_c` and the damping injection `u_d`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::inertia::ControlledInertia;
use crate::linalg::{self, Factor};
use crate::potential::ControlledPotential;
use crate::system::{ElSystem, State};

/// Eigenvalue slack accepted when certifying a dissipation matrix as PSD.
pub const PSD_TOL: f64 = 1e-10;

/// Damping injection gain `K_v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DampingGain {
    Scalar(f64),
    Matrix(DMatrix<f64>),
}

impl DampingGain {
    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            DampingGain::Scalar(k) if *k > 0.0 && k.is_finite() => Ok(()),
            DampingGain::Scalar(k) => Err(Error::Config(format!(
                "damping gain must be positive, got {k}"
            ))),
            DampingGain::Matrix(k) => {
                if k.shape() != (m, m) {
                    return Err(Error::Config(format!("damping gain must be {m}x{m}")));
                }
                if !linalg::is_symmetric(k, 0.0) || !(linalg::min_eigen(k).0 > 0.0) {
                    return Err(Error::Config(
                        "damping gain matrix must be symmetric positive definite".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            DampingGain::Scalar(k) => v * *k,
            DampingGain::Matrix(k) => k * v,
        }
    }

    pub fn as_matrix(&self, m: usize) -> DMatrix<f64> {
        match self {
            DampingGain::Scalar(k) => DMatrix::identity(m, m) * *k,
            DampingGain::Matrix(k) => k.clone(),
        }
    }
}

/// Scalar design gains, echoed into every output for provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    /// Controlled-potential stiffness.
    pub kp: f64,
    pub kv: DampingGain,
    /// Free parameter of the dissipation construction.
    pub phi: f64,
}

impl Gains {
    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.kp > 0.0 && self.kp.is_finite()) {
            return Err(Error::Config(format!(
                "kp must be positive, got {}",
                self.kp
            )));
        }
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            return Err(Error::Config(format!(
                "phi must be nonnegative, got {}",
                self.phi
            )));
        }
        self.kv.validate(m)
    }
}

/// Everything the kinetic matching condition needs at one state.
pub struct KineticTerms {
    pub mass: DMatrix<f64>,
    pub mass_factor: Factor,
    pub mc: DMatrix<f64>,
    pub mc_factor: Factor,
    /// `C(q, q̇)`.
    pub c: DMatrix<f64>,
    /// `Ĉ_c(q, q̇)`.
    pub cc: DMatrix<f64>,
    /// `A = M̂_c M⁻¹ C − Ĉ_c`.
    pub a: DMatrix<f64>,
    /// `J = skew(A)`.
    pub j: DMatrix<f64>,
    /// `Π = sym(A)`.
    pub pi: DMatrix<f64>,
    /// `Σ = G⊥ M M̂_c⁻¹`.
    pub sigma: DMatrix<f64>,
}

impl KineticTerms {
    pub fn new(sys: &ElSystem, mc_model: &dyn ControlledInertia, s: &State) -> Result<Self> {
        let c = sys.coriolis(s)?;
        check_len("controlled inertia dimension", sys.dof(), mc_model.dim())?;
        let mass = sys.mass_matrix(&s.q);
        let mass_factor = Factor::new(&mass, "mass matrix M(q)")?;
        let mc = mc_model.evaluate(&s.q);
        let mc_factor = Factor::new(&mc, "controlled inertia")?;
        let cc = mc_model.coriolis(&s.q, &s.qd);
        let a = &mc * mass_factor.solve_mat(&c) - &cc;
        let sigma = linalg::right_solve(&(sys.annihilator() * &mass), &mc_factor);
        Ok(Self {
            j: linalg::skew_part(&a),
            pi: linalg::sym_part(&a),
            mass,
            mass_factor,
            mc,
            mc_factor,
            c,
            cc,
            a,
            sigma,
        })
    }
}

/// Constructs a symmetric `R ≥ 0` with `Σ (R − Π) = 0`.
pub trait Dissipation: Send + Sync {
    fn evaluate(&self, sys: &ElSystem, terms: &KineticTerms) -> Result<DMatrix<f64>>;
}

/// Generic completion: `R = Π + N K Nᵀ + φ N Nᵀ` where the columns of `N`
/// span the null space of `Σ`. The constraint fixes `R` on the row space of
/// `Σ`; `K` is the minimal-trace choice that makes the completion PSD (the
/// Schur complement of the fixed block is set to zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinTraceCompletion {
    pub phi: f64,
}

impl Dissipation for MinTraceCompletion {
    fn evaluate(&self, _sys: &ElSystem, terms: &KineticTerms) -> Result<DMatrix<f64>> {
        let n = terms.pi.nrows();
        let null = linalg::null_space(&terms.sigma);
        let k = null.ncols();
        // Orthonormal basis of the row space of Σ, completing N to a basis.
        let row = linalg::null_space(&null.transpose());
        let basis = DMatrix::from_fn(n, n, |i, j| {
            if j < row.ncols() {
                row[(i, j)]
            } else {
                null[(i, j - row.ncols())]
            }
        });
        let p = basis.transpose() * &terms.pi * &basis;
        let f = row.ncols();
        let p11 = p.view((0, 0), (f, f)).into_owned();
        let p12 = p.view((0, f), (f, k)).into_owned();
        let p22 = p.view((f, f), (k, k)).into_owned();
        let eig = SymmetricEigen::new(linalg::sym_part(&p11));
        let scale = terms.pi.amax().max(1.0);
        let min_eig = eig.eigenvalues.min();
        if min_eig < -PSD_TOL * scale {
            return Err(Error::NoPsdDissipation { min_eig });
        }
        // Pseudo-inverse of the fixed block; its kernel must not be hit by Π₁₂.
        let cutoff = PSD_TOL * scale;
        let mut pinv = DMatrix::zeros(f, f);
        for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors.column(idx);
            if lam > cutoff {
                pinv += v * v.transpose() / lam;
            } else if (v.transpose() * &p12).amax() > cutoff.sqrt() {
                return Err(Error::NoPsdDissipation { min_eig: lam });
            }
        }
        let kmat = p12.transpose() * pinv * &p12 - &p22 + DMatrix::identity(k, k) * self.phi;
        let r = linalg::sym_part(&(&terms.pi + &null * linalg::sym_part(&kmat) * null.transpose()));
        let (lam, _) = linalg::min_eigen(&r);
        if lam < -PSD_TOL * scale {
            return Err(Error::NoPsdDissipation { min_eig: lam });
        }
        Ok(r)
    }
}

/// Closure computing `R` from the kinetic terms at a state.
pub type DissipationFn =
    Arc<dyn Fn(&ElSystem, &KineticTerms) -> Result<DMatrix<f64>> + Send + Sync>;

/// Dissipation from a closure, for systems with a closed-form construction.
#[derive(Clone)]
pub struct FnDissipation(pub DissipationFn);

impl fmt::Debug for FnDissipation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnDissipation")
    }
}

impl Dissipation for FnDissipation {
    fn evaluate(&self, sys: &ElSystem, terms: &KineticTerms) -> Result<DMatrix<f64>> {
        (self.0)(sys, terms)
    }
}

/// The full design: system, `M̂_c`, `V_c`, `R` construction and gains.
#[derive(Clone)]
pub struct ControllerSpec {
    system: ElSystem,
    inertia: Arc<dyn ControlledInertia>,
    potential: Arc<dyn ControlledPotential>,
    dissipation: Arc<dyn Dissipation>,
    gains: Gains,
}

impl fmt::Debug for ControllerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControllerSpec")
            .field("system", &self.system)
            .field("gains", &self.gains)
            .finish_non_exhaustive()
    }
}

/// All intermediate quantities of one control evaluation.
pub struct ControlBreakdown {
    pub terms: KineticTerms,
    pub r: DMatrix<f64>,
    pub u_c: DVector<f64>,
    pub u_d: DVector<f64>,
    pub u: DVector<f64>,
}

impl ControllerSpec {
    pub fn new(
        system: ElSystem,
        inertia: Arc<dyn ControlledInertia>,
        potential: Arc<dyn ControlledPotential>,
        dissipation: Arc<dyn Dissipation>,
        gains: Gains,
    ) -> Result<Self> {
        gains.validate(system.inputs())?;
        if inertia.dim() != system.dof() {
            return Err(Error::Dimension {
                context: "controlled inertia",
                expected: system.dof().to_string(),
                actual: inertia.dim().to_string(),
            });
        }
        Ok(Self {
            system,
            inertia,
            potential,
            dissipation,
            gains,
        })
    }

    pub fn system(&self) -> &ElSystem {
        &self.system
    }

    pub fn inertia(&self) -> &dyn ControlledInertia {
        self.inertia.as_ref()
    }

    pub fn inertia_arc(&self) -> Arc<dyn ControlledInertia> {
        self.inertia.clone()
    }

    pub fn potential(&self) -> &dyn ControlledPotential {
        self.potential.as_ref()
    }

    pub fn gains(&self) -> &Gains {
        &self.gains
    }

    pub fn kinetic_terms(&self, s: &State) -> Result<KineticTerms> {
        KineticTerms::new(&self.system, self.inertia.as_ref(), s)
    }

    /// `J = ½[(M̂_c M⁻¹ C − Ĉ_c) − (M̂_c M⁻¹ C − Ĉ_c)ᵀ]`, exactly skew-symmetric.
    pub fn gyroscopic(&self, s: &State) -> Result<DMatrix<f64>> {
        Ok(self.kinetic_terms(s)?.j)
    }

    pub fn dissipative(&self, s: &State) -> Result<DMatrix<f64>> {
        let t = self.kinetic_terms(s)?;
        self.dissipation.evaluate(&self.system, &t)
    }

    pub fn breakdown(&self, s: &State) -> Result<ControlBreakdown> {
        let terms = self.kinetic_terms(s)?;
        let r = self.dissipation.evaluate(&self.system, &terms)?;
        let u_c = self.shaping_from(&terms, &r, s);
        let u_d = self.damping_from(&terms, s);
        Ok(ControlBreakdown {
            u: &u_c + &u_d,
            terms,
            r,
            u_c,
            u_d,
        })
    }

    /// `u_c = (GᵀG)⁻¹Gᵀ{[C − M M̂_c⁻¹(Ĉ_c + J + R)] q̇ + ∇V − M M̂_c⁻¹ ∇V_c}`.
    pub fn shaping_control(&self, s: &State) -> Result<DVector<f64>> {
        let terms = self.kinetic_terms(s)?;
        let r = self.dissipation.evaluate(&self.system, &terms)?;
        Ok(self.shaping_from(&terms, &r, s))
    }

    /// `u_d = −K_v Gᵀ M⁻¹ M̂_c q̇`.
    pub fn damping_control(&self, s: &State) -> Result<DVector<f64>> {
        check_len("state q", self.system.dof(), s.q.len())?;
        check_len("state q̇", self.system.dof(), s.qd.len())?;
        let mass = Factor::new(&self.system.mass_matrix(&s.q), "mass matrix M(q)")?;
        let mc = self.inertia.evaluate(&s.q);
        Ok(self.damping_with(&mass, &mc, s))
    }

    pub fn control(&self, s: &State) -> Result<DVector<f64>> {
        Ok(self.breakdown(s)?.u)
    }

    fn shaping_from(&self, t: &KineticTerms, r: &DMatrix<f64>, s: &State) -> DVector<f64> {
        let sys = &self.system;
        let velocity =
            &t.c * &s.qd - &t.mass * t.mc_factor.solve_vec(&((&t.cc + &t.j + r) * &s.qd));
        let potential =
            sys.potential_grad(&s.q) - &t.mass * t.mc_factor.solve_vec(&self.potential.grad(&s.q));
        sys.input_left_inverse() * (velocity + potential)
    }

    fn damping_from(&self, t: &KineticTerms, s: &State) -> DVector<f64> {
        self.damping_with(&t.mass_factor, &t.mc, s)
    }

    fn damping_with(&self, mass: &Factor, mc: &DMatrix<f64>, s: &State) -> DVector<f64> {
        let v = self.system.input_matrix().transpose() * mass.solve_vec(&(mc * &s.qd));
        -self.gains.kv.apply(&v)
    }
}
