//! Experiment runners. Each returns the CSV body, a JSON summary computed from
//! the same rows, an SVG plot and run metadata.

mod decoder;
mod reconstruct;
mod stability;
mod watermark;

use anyhow::Result;
use dpm_inversion::inversion::invert;
use dpm_inversion::{DataPredictionModel, InversionReport, State, TimeGrid};
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind, MethodSpec};
use crate::output::{unix_time, RunOutput};

pub use decoder::{summarize_decoder, DecoderRow, DecoderSummary};
pub use reconstruct::{summarize_reconstruct, MethodSummary, ReconstructRow};
pub use stability::{summarize_stability, StabilityRow, StabilitySummary};
pub use watermark::{summarize_watermark, WatermarkRow, WatermarkSummary};

/// Runs the configured experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let started = unix_time();
    let clock = std::time::Instant::now();
    let (csv, summary, plot) = match cfg.experiment {
        ExperimentKind::Reconstruct => reconstruct::run_reconstruct(cfg)?,
        ExperimentKind::SweepNaive => reconstruct::run_sweep_naive(cfg)?,
        ExperimentKind::Stability => stability::run_stability(cfg)?,
        ExperimentKind::Watermark => watermark::run_watermark(cfg)?,
        ExperimentKind::Decoder => decoder::run_decoder(cfg)?,
    };
    let meta = json!({
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "trials": cfg.trials,
        "config": cfg.to_toml()?,
        "started_unix": started,
        "finished_unix": unix_time(),
        "wall_time_secs": clock.elapsed().as_secs_f64(),
        "threads": rayon::current_num_threads(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    Ok(RunOutput {
        csv,
        summary,
        plot,
        meta,
    })
}

pub(crate) fn standard_normal(rng: &mut impl Rng, dim: usize) -> State {
    State::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// Result of inverting with one method, after any step-size sweep.
pub struct MethodOutcome {
    pub report: InversionReport,
    /// Step size that produced `report`, if the method swept one.
    pub step: Option<f64>,
}

/// Inverts with `spec`, trying each swept step size until every coarse step
/// converges; the last attempt is returned when none does.
pub fn invert_method(
    model: &dyn DataPredictionModel,
    grid: &TimeGrid,
    x0: &State,
    spec: &MethodSpec,
) -> dpm_inversion::Result<MethodOutcome> {
    let regridded;
    let grid = match spec.grid_steps {
        Some(m) if m != grid.steps() => {
            regridded = grid.regrid(m)?;
            &regridded
        }
        _ => grid,
    };
    let configs = spec.sweep_configs();
    for (k, cfg) in configs.iter().enumerate() {
        let report = invert(model, grid, x0, cfg)?;
        if report.all_converged() || k + 1 == configs.len() {
            let step = spec.step_sweep.get(k).copied();
            return Ok(MethodOutcome { report, step });
        }
    }
    unreachable!("sweep_configs always yields a configuration")
}
