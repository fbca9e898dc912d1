//! Command-line front end: synthesis, simulation, verification and
//! reporting for the cart-pendulum energy-shaping design, with CSV artifacts.

// Validation uses `!(x > 0.0)`-style tests on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "lagshape",
    version,
    about = "Approximate energy shaping for underactuated mechanical systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the blended controlled inertia; writes the model and the residual map.
    Synth(CommonArgs),
    /// Closed-loop runs from every initial condition, plus the V_c surface.
    Simulate(CommonArgs),
    /// Invariant suite and Lyapunov scan; exits nonzero if any check fails.
    Verify(CommonArgs),
    /// Matching statistics and one summary row per closed-loop run.
    Report(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment configuration (JSON); defaults apply to omitted fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed (overrides the configuration).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Record every N-th integration step (overrides the configuration).
    #[arg(long)]
    pub stride: Option<usize>,
    /// Use a saved model instead of fitting one (simulate, verify, report).
    #[arg(long)]
    pub model: Option<PathBuf>,
}

impl CommonArgs {
    /// Loads the configuration, applies command-line overrides and validates.
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::load(self.config.as_deref())?;
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(stride) = self.stride {
            cfg.simulation.stride = stride;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs one subcommand, printing its summary to stdout.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => {
            if a.model.is_some() {
                return Err(CliError::Config(
                    "synth fits a new model; --model is not accepted".into(),
                ));
            }
            let cfg = a.resolve()?;
            let s = commands::synth(&cfg)?;
            println!(
                "[synth] {} centers, max residual {:.3e} -> {:.3e} (rms {:.3e}), {} iterations{}",
                s.centers,
                s.max_before,
                s.max_after,
                s.rms_after,
                s.iterations,
                if s.converged {
                    ""
                } else {
                    " (iteration cap reached)"
                }
            );
            println!("[synth] model written to {}", s.model_path.display());
        }
        Command::Simulate(a) => {
            let cfg = a.resolve()?;
            for r in commands::simulate(&cfg, a.model.as_deref())? {
                println!(
                    "[simulate] {}: {} rows, final ‖(q1, qd)‖ = {:.3e}, |q2 - q2*| = {:.3e}, settled {}",
                    r.file,
                    r.rows,
                    r.final_angle_speed_norm,
                    r.final_cart_error,
                    r.settle_time.map_or("never".to_string(), |t| format!("from t = {t:.2} s"))
                );
            }
        }
        Command::Verify(a) => {
            let cfg = a.resolve()?;
            let report = commands::verify(&cfg, a.model.as_deref())?;
            for c in &report.checks {
                println!(
                    "[verify] {:<26} {}  value {:.3e} (tolerance {:.1e})  {}",
                    c.name,
                    if c.passed { "PASS" } else { "FAIL" },
                    c.value,
                    c.tolerance,
                    c.location
                );
            }
            if !report.passed {
                return Err(CliError::Checks(report.failed()));
            }
        }
        Command::Report(a) => {
            let cfg = a.resolve()?;
            let r = commands::report(&cfg, a.model.as_deref())?;
            println!(
                "[report] {} centers, matching residual max {:.3e}, rms {:.3e}",
                r.centers, r.max_residual, r.rms_residual
            );
            for run in &r.runs {
                println!(
                    "[report] {} from {:?}: settled {}",
                    run.file,
                    run.initial,
                    run.settle_time
                        .map_or("never".to_string(), |t| format!("from t = {t:.2} s"))
                );
            }
        }
    }
    Ok(())
}
