//! Cart-pendulum instance: `M(q) = [[1, b cos q₁], [b cos q₁, c]]`,
//! `V = a cos q₁`, force on the cart, pendulum angle `q₁` measured from upright.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerSpec, DampingGain, Dissipation, Gains, KineticTerms};
use crate::error::{Error, Result};
use crate::fit::{self, FitConfig, FitOutcome, GridAxis, SampleGrid};
use crate::matching::CenterSet;
use crate::potential::ControlledPotential;
use crate::rbf::RbfInertiaModel;
use crate::sim::SimConfig;
use crate::system::{ElSystem, State, Workspace};

/// Number of centers on the lattice `q₁ⁱ = π/2 − iπ/12`, `i = 1..11`.
pub const LATTICE_CENTERS: usize = 11;
/// Outermost lattice center `5π/12`; the centers span `[−5π/12, 5π/12]`.
pub const CENTER_SPAN: f64 = 5.0 * PI / 12.0;
/// Half-width of the fitted and verified pendulum-angle range.
pub const WORKSPACE_Q1: f64 = 1.309;
/// Half-width of the declared cart-position range around the target.
pub const WORKSPACE_Q2: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPendParams {
    /// `g/l`.
    pub a: f64,
    /// `1/l`.
    pub b: f64,
    /// `(m + M)/(l² m)`.
    pub c: f64,
    /// Target cart position.
    pub q2_star: f64,
    /// `1 − α₁/min mᵢ`.
    pub gamma: f64,
    pub alpha2: f64,
    pub beta: f64,
    pub kp: f64,
    pub kv: f64,
    pub phi: f64,
    /// Number of RBF centers.
    pub centers: usize,
}

impl Default for CartPendParams {
    fn default() -> Self {
        Self {
            a: 9.8,
            b: 1.0,
            c: 6.0,
            q2_star: 0.0,
            gamma: 0.5,
            alpha2: 20.0,
            beta: 30.0,
            kp: 0.01,
            kv: 700.0,
            phi: 0.002,
            centers: LATTICE_CENTERS,
        }
    }
}

impl CartPendParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("q2_star", self.q2_star),
            ("gamma", self.gamma),
            ("alpha2", self.alpha2),
            ("beta", self.beta),
            ("kp", self.kp),
            ("kv", self.kv),
            ("phi", self.phi),
        ];
        if let Some((name, _)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Config(format!("{name} must be finite")));
        }
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("alpha2", self.alpha2),
            ("beta", self.beta),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if self.c <= self.b * self.b {
            return Err(Error::Config(
                "c must exceed b² for a positive-definite mass matrix".into(),
            ));
        }
        if self.centers == 0 {
            return Err(Error::Config("at least one center is required".into()));
        }
        let alpha1 = self.alpha1();
        if !(alpha1 > 0.0 && alpha1 < self.min_m()) {
            return Err(Error::Config(format!(
                "alpha1 = {alpha1} outside (0, min m_i)"
            )));
        }
        Gains {
            kp: self.kp,
            kv: DampingGain::Scalar(self.kv),
            phi: self.phi,
        }
        .validate(1)
    }

    /// `min mᵢ = b cos(5π/12)` over the lattice.
    pub fn min_m(&self) -> f64 {
        self.b * CENTER_SPAN.cos()
    }

    /// `α₁ = (1 − γ) min mᵢ`.
    pub fn alpha1(&self) -> f64 {
        (1.0 - self.gamma) * self.min_m()
    }

    /// `s₁₁ = −α₁α₂`, shared by every center.
    pub fn s11(&self) -> f64 {
        -self.alpha1() * self.alpha2
    }

    /// `s₁₂ = α₂`, shared by every center.
    pub fn s12(&self) -> f64 {
        self.alpha2
    }

    pub fn equilibrium(&self) -> DVector<f64> {
        DVector::from_vec(vec![0.0, self.q2_star])
    }

    pub fn gains(&self) -> Gains {
        Gains {
            kp: self.kp,
            kv: DampingGain::Scalar(self.kv),
            phi: self.phi,
        }
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            lower: vec![-WORKSPACE_Q1, self.q2_star - WORKSPACE_Q2],
            upper: vec![WORKSPACE_Q1, self.q2_star + WORKSPACE_Q2],
        }
    }
}

pub fn mass_matrix(p: &CartPendParams, q1: f64) -> DMatrix<f64> {
    let m = p.b * q1.cos();
    DMatrix::from_row_slice(2, 2, &[1.0, m, m, p.c])
}

pub fn build_system(p: &CartPendParams) -> Result<ElSystem> {
    p.validate()?;
    let (a, b, c) = (p.a, p.b, p.c);
    ElSystem::builder(2, 1)
        .mass_matrix(move |q| {
            let m = b * q[0].cos();
            DMatrix::from_row_slice(2, 2, &[1.0, m, m, c])
        })
        .mass_flow(move |q, qd| {
            let s = b * q[0].sin();
            DMatrix::from_row_slice(2, 2, &[-s * qd[1], 0.0, -s * qd[0], 0.0])
        })
        .potential(move |q| a * q[0].cos())
        .potential_grad(move |q| DVector::from_vec(vec![-a * q[0].sin(), 0.0]))
        .input_matrix(DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
        .left_annihilator(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
        .workspace(p.workspace())
        .build()
}

/// Shaping matrix `S = M_i M_ci⁻¹` for `mᵢ = m`: first row `[−α₁α₂, α₂]`,
/// second row parametrized by `β` so that `S⁻¹Mᵢ` is symmetric positive definite.
pub fn shaping_matrix(p: &CartPendParams, m: f64) -> DMatrix<f64> {
    let (a1, a2, be, c) = (p.alpha1(), p.alpha2, p.beta, p.c);
    let s21 = a1 * a2 * (c - a1 * m) / (a1 - m) - be;
    let s22 = ((c * a2 + be) * m - a1 * (be + a2 * m * m)) / (m * (m - a1));
    DMatrix::from_row_slice(2, 2, &[-a1 * a2, a2, s21, s22])
}

/// Closed form of `S⁻¹ Mᵢ` for `mᵢ = m`.
pub fn controlled_inertia(p: &CartPendParams, m: f64) -> DMatrix<f64> {
    let (a1, a2, be, c) = (p.alpha1(), p.alpha2, p.beta, p.c);
    let d = a2 * be * (m - a1).powi(2);
    let m11 = (-a1 * be + a2 * c * m - a2 * m.powi(3) + be * m) / d;
    let m12 = m * (a1 * a2 * c - a1 * a2 * m * m - a1 * be + be * m) / d;
    let m22 = m * (a1 * a1 * a2 * c - a1 * a1 * a2 * m * m - a1 * be * m + be * m * m) / d;
    DMatrix::from_row_slice(2, 2, &[m11, m12, m12, m22])
}

/// Pendulum angles of `r` centers: the lattice `π/2 − iπ/12` for `r = 11`,
/// otherwise `r` uniformly spaced angles over `[−5π/12, 5π/12]` (`r = 1`
/// gives the upright angle).
pub fn center_angles(r: usize) -> Vec<f64> {
    match r {
        0 => Vec::new(),
        1 => vec![0.0],
        LATTICE_CENTERS => (1..=LATTICE_CENTERS)
            .map(|i| PI / 2.0 - i as f64 * PI / 12.0)
            .collect(),
        _ => (0..r)
            .map(|k| CENTER_SPAN * (1.0 - 2.0 * k as f64 / (r - 1) as f64))
            .collect(),
    }
}

/// Centers `(q₁ⁱ, q₂*)` with their closed-form controlled inertias.
pub fn center_family(p: &CartPendParams) -> Result<CenterSet> {
    center_family_at(p, &center_angles(p.centers))
}

pub fn center_family_at(p: &CartPendParams, angles: &[f64]) -> Result<CenterSet> {
    p.validate()?;
    let sys = build_system(p)?;
    let mut centers = Vec::with_capacity(angles.len());
    let mut mcs = Vec::with_capacity(angles.len());
    for (i, &q1) in angles.iter().enumerate() {
        let m = p.b * q1.cos();
        if !(m > p.alpha1()) {
            return Err(Error::Center {
                index: i,
                reason: format!("m = {m} does not exceed alpha1 = {}", p.alpha1()),
            });
        }
        centers.push(DVector::from_vec(vec![q1, p.q2_star]));
        mcs.push(controlled_inertia(p, m));
    }
    CenterSet::new(&sys, centers, mcs).map_err(|e| match e {
        Error::Center { index, reason } => Error::Config(format!("center {index}: {reason}")),
        other => other,
    })
}

/// `V_c = (K_p/2) z² + (a/s₁₁) cos q₁`, `z = (q₂ − q₂*) − (s₁₂/s₁₁) q₁`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartPendPotential {
    pub a: f64,
    pub kp: f64,
    pub s11: f64,
    pub s12: f64,
    pub q2_star: f64,
}

impl CartPendPotential {
    pub fn new(p: &CartPendParams) -> Self {
        Self {
            a: p.a,
            kp: p.kp,
            s11: p.s11(),
            s12: p.s12(),
            q2_star: p.q2_star,
        }
    }

    pub fn z(&self, q: &DVector<f64>) -> f64 {
        (q[1] - self.q2_star) - self.s12 / self.s11 * q[0]
    }

    pub fn hessian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let r = self.s12 / self.s11;
        let h11 = self.kp * r * r - self.a * q[0].cos() / self.s11;
        DMatrix::from_row_slice(2, 2, &[h11, -self.kp * r, -self.kp * r, self.kp])
    }
}

impl ControlledPotential for CartPendPotential {
    fn value(&self, q: &DVector<f64>) -> f64 {
        let z = self.z(q);
        0.5 * self.kp * z * z + self.a / self.s11 * q[0].cos()
    }

    fn grad(&self, q: &DVector<f64>) -> DVector<f64> {
        let z = self.z(q);
        DVector::from_vec(vec![
            -self.kp * z * self.s12 / self.s11 - self.a * q[0].sin() / self.s11,
            self.kp * z,
        ])
    }
}

/// Closed-form dissipation for the single unactuated direction:
/// with `Σ = [σ₁, σ₂]`,
/// `R = φ v vᵀ + [[0, σ₁Π₁₁/σ₂ + Π₁₂], [·, Π₂₂ − σ₁²Π₁₁/σ₂²]]`, `v = [−σ₂/σ₁, 1]`,
/// which satisfies `Σ (R − Π) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartPendDissipation {
    pub phi: f64,
}

/// Relative size below which a `Σ` entry counts as vanishing.
const SIGMA_FLOOR: f64 = 1e-12;

impl Dissipation for CartPendDissipation {
    fn evaluate(&self, _sys: &ElSystem, t: &KineticTerms) -> Result<DMatrix<f64>> {
        let (s1, s2) = (t.sigma[(0, 0)], t.sigma[(0, 1)]);
        let floor = SIGMA_FLOOR * t.sigma.amax().max(f64::MIN_POSITIVE);
        if !(s1.abs() > floor && s2.abs() > floor) {
            return Err(Error::Dissipation(format!(
                "Σ = [{s1:e}, {s2:e}] has a vanishing entry (outside the design region)"
            )));
        }
        let pi = &t.pi;
        let phi = self.phi;
        let r11 = phi * s2 * s2 / (s1 * s1);
        let r12 = -phi * s2 / s1 + s1 * pi[(0, 0)] / s2 + pi[(0, 1)];
        let r22 = phi - s1 * s1 * pi[(0, 0)] / (s2 * s2) + pi[(1, 1)];
        Ok(DMatrix::from_row_slice(2, 2, &[r11, r12, r12, r22]))
    }
}

/// Fit settings over `−1.309 ≤ q₁ ≤ 1.309` (121 samples) at `q₂ = q₂*`,
/// with the RBF distance taken over `q₁` only.
pub fn default_fit_config(p: &CartPendParams) -> FitConfig {
    FitConfig {
        grid: SampleGrid {
            axes: vec![
                GridAxis::Range {
                    lower: -WORKSPACE_Q1,
                    upper: WORKSPACE_Q1,
                    count: 121,
                },
                GridAxis::Fixed(p.q2_star),
            ],
        },
        active: vec![0],
        ..FitConfig::default()
    }
}

/// Default initial conditions `(q₁, q₂, q̇₁, q̇₂)` for closed-loop runs.
pub fn default_initial_conditions(p: &CartPendParams) -> Vec<State> {
    [(0.5, 0.0), (-0.5, 0.0), (0.3, 1.0)]
        .into_iter()
        .map(|(q1, dq2)| State::from_slices(&[q1, p.q2_star + dq2], &[0.0, 0.0]))
        .collect()
}

/// A fully wired cart-pendulum design.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub params: CartPendParams,
    pub system: ElSystem,
    pub centers: CenterSet,
    pub potential: Arc<CartPendPotential>,
    pub model: Arc<RbfInertiaModel>,
    pub fit: Option<FitOutcome>,
    pub controller: ControllerSpec,
}

impl Experiment {
    /// Builds the center family, fits `M̂_c` and wires the controller.
    pub fn synthesize(p: &CartPendParams, cfg: &FitConfig) -> Result<Self> {
        p.validate()?;
        let system = build_system(p)?;
        let centers = center_family(p)?;
        let potential = Arc::new(CartPendPotential::new(p));
        let grad = {
            let v = potential.clone();
            move |q: &DVector<f64>| v.grad(q)
        };
        let outcome = fit::fit(&centers, &system, &grad, cfg)?;
        let model = Arc::new(outcome.model.clone());
        let mut exp = Self::assemble(p, system, centers, potential, model)?;
        exp.fit = Some(outcome);
        Ok(exp)
    }

    /// Wires a controller around an existing (e.g. loaded) model.
    pub fn with_model(p: &CartPendParams, model: RbfInertiaModel) -> Result<Self> {
        p.validate()?;
        if model.is_empty() || model.centers()[0].len() != 2 {
            return Err(Error::Config(
                "model is not a two-coordinate inertia model".into(),
            ));
        }
        let system = build_system(p)?;
        let centers = center_family(p)?;
        let potential = Arc::new(CartPendPotential::new(p));
        Self::assemble(p, system, centers, potential, Arc::new(model))
    }

    fn assemble(
        p: &CartPendParams,
        system: ElSystem,
        centers: CenterSet,
        potential: Arc<CartPendPotential>,
        model: Arc<RbfInertiaModel>,
    ) -> Result<Self> {
        let controller = ControllerSpec::new(
            system.clone(),
            model.clone(),
            potential.clone(),
            Arc::new(CartPendDissipation { phi: p.phi }),
            p.gains(),
        )?;
        Ok(Self {
            params: p.clone(),
            system,
            centers,
            potential,
            model,
            fit: None,
            controller,
        })
    }

    pub fn equilibrium(&self) -> DVector<f64> {
        self.params.equilibrium()
    }

    pub fn sim_config(&self, initial: State, t_end: f64, dt: f64, stride: usize) -> SimConfig {
        SimConfig {
            t_end,
            dt,
            initial,
            stride,
        }
    }
}

/// The standard design (default parameters) with the default fit.
pub fn default_experiment(p: &CartPendParams) -> Result<Experiment> {
    Experiment::synthesize(p, &default_fit_config(p))
}
