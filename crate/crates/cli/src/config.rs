//! The experiment configuration document and its resolution into core types.

use std::fs;
use std::path::{Path, PathBuf};

use lagshape_core::cartpend::{self, CartPendParams};
use lagshape_core::fit::{FitConfig, GridAxis};
use lagshape_core::sim::SimConfig;
use lagshape_core::stability::ScanGrid;
use lagshape_core::State;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Systems selectable by name.
pub const SYSTEMS: &[&str] = &["cartpend"];

/// Everything an experiment needs; every field has a default, so `{}` is a
/// valid document describing the standard cart-pendulum design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: String,
    pub params: CartPendParams,
    pub fit: FitSettings,
    pub simulation: SimulationSettings,
    pub verify: VerifySettings,
    pub surface: SurfaceSettings,
    /// Seed for the random states drawn by `verify`.
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: "cartpend".into(),
            params: CartPendParams::default(),
            fit: FitSettings::default(),
            simulation: SimulationSettings::default(),
            verify: VerifySettings::default(),
            surface: SurfaceSettings::default(),
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    /// Samples of `q₁` over the workspace (at `q₂ = q₂*`).
    pub grid_points: usize,
    pub max_iterations: usize,
    pub pd_penalty: f64,
    pub pd_margin: f64,
    pub anchor: f64,
    pub ridge: f64,
    pub width_starts: Vec<f64>,
}

impl Default for FitSettings {
    fn default() -> Self {
        let d = FitConfig::default();
        Self {
            grid_points: 121,
            max_iterations: d.max_iterations,
            pd_penalty: d.pd_penalty,
            pd_margin: d.pd_margin,
            anchor: d.anchor,
            ridge: d.ridge,
            width_starts: d.width_starts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    pub t_end: f64,
    pub dt: f64,
    pub stride: usize,
    /// `(q₁, q₂, q̇₁, q̇₂)` per run.
    pub initial_conditions: Vec<[f64; 4]>,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        let ics = cartpend::default_initial_conditions(&CartPendParams::default())
            .into_iter()
            .map(|s| [s.q[0], s.q[1], s.qd[0], s.qd[1]])
            .collect();
        Self {
            t_end: 40.0,
            dt: 1e-3,
            stride: 10,
            initial_conditions: ics,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySettings {
    /// Random workspace states for the pointwise identities.
    pub random_states: usize,
    /// Bound on `|q̇ᵢ|` for those states.
    pub max_speed: f64,
    /// Tolerance of the algebraic identities.
    pub tolerance: f64,
    /// Negative eigenvalues of `R` above `−psd_tolerance` count as PSD.
    pub psd_tolerance: f64,
    /// Exclusion ball radius of the Lyapunov scan.
    pub rho: f64,
    pub scan_min: f64,
    pub scan_max: f64,
    pub scan_count: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            random_states: 1000,
            max_speed: 1.0,
            tolerance: 1e-10,
            psd_tolerance: 1e-10,
            rho: 0.05,
            scan_min: 1e-3,
            scan_max: 1e2,
            scan_count: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceSettings {
    pub q1_points: usize,
    pub q2_points: usize,
    /// Half-width of the `q₂` window around `q₂*`.
    pub q2_half_width: f64,
}

impl Default for SurfaceSettings {
    fn default() -> Self {
        Self {
            q1_points: 61,
            q2_points: 41,
            q2_half_width: cartpend::WORKSPACE_Q2,
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON document; a missing path yields the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !SYSTEMS.contains(&self.system.as_str()) {
            return Err(CliError::Config(format!(
                "unknown system {:?}; available: {}",
                self.system,
                SYSTEMS.join(", ")
            )));
        }
        self.params.validate()?;
        self.fit_config().validate(2)?;
        if self.fit.grid_points < 2 {
            return Err(CliError::Config(
                "fit.grid_points must be at least 2".into(),
            ));
        }
        if self.simulation.initial_conditions.is_empty() {
            return Err(CliError::Config(
                "at least one initial condition is required".into(),
            ));
        }
        for cfg in self.sim_configs() {
            cfg.validate()?;
        }
        let v = &self.verify;
        if !(v.max_speed >= 0.0 && v.tolerance >= 0.0 && v.psd_tolerance >= 0.0 && v.rho >= 0.0) {
            return Err(CliError::Config(
                "verify tolerances, speed bound and rho must be nonnegative".into(),
            ));
        }
        self.scan_grid()?;
        if self.surface.q1_points < 2
            || self.surface.q2_points < 2
            || !(self.surface.q2_half_width > 0.0)
        {
            return Err(CliError::Config(
                "surface grid needs at least 2 points per axis and a positive q2 window".into(),
            ));
        }
        Ok(())
    }

    pub fn fit_config(&self) -> FitConfig {
        let f = &self.fit;
        let mut cfg = cartpend::default_fit_config(&self.params);
        cfg.grid.axes[0] = GridAxis::Range {
            lower: -cartpend::WORKSPACE_Q1,
            upper: cartpend::WORKSPACE_Q1,
            count: f.grid_points,
        };
        cfg.max_iterations = f.max_iterations;
        cfg.pd_penalty = f.pd_penalty;
        cfg.pd_margin = f.pd_margin;
        cfg.anchor = f.anchor;
        cfg.ridge = f.ridge;
        cfg.width_starts = f.width_starts.clone();
        cfg
    }

    pub fn sim_configs(&self) -> Vec<SimConfig> {
        let s = &self.simulation;
        s.initial_conditions
            .iter()
            .map(|x| SimConfig {
                t_end: s.t_end,
                dt: s.dt,
                initial: State::from_slices(&x[..2], &x[2..]),
                stride: s.stride,
            })
            .collect()
    }

    pub fn scan_grid(&self) -> Result<ScanGrid, CliError> {
        let v = &self.verify;
        Ok(ScanGrid::log_spaced(v.scan_min, v.scan_max, v.scan_count)?)
    }

    /// Provenance block for CSV headers: the resolved document, one JSON line per row.
    pub fn echo(&self) -> Vec<String> {
        let json = serde_json::to_string_pretty(self).expect("configuration serializes");
        let mut lines = vec!["lagshape experiment configuration".to_string()];
        lines.extend(json.lines().map(String::from));
        lines
    }
}
