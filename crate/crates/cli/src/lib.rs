//! Experiment runner for diffusion sampler inversion.

pub mod config;
pub mod experiments;
pub mod output;
pub mod plot;
pub mod presets;

pub use config::ExperimentConfig;
pub use experiments::run;
pub use output::RunOutput;
