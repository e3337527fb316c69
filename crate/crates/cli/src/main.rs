use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use dpm_inversion_cli::config::{ExperimentConfig, ExperimentKind};
use dpm_inversion_cli::{presets, run};

#[derive(Parser)]
#[command(name = "dpm-invert", version, about = "Diffusion sampler inversion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Invert generated samples with each configured method.
    Reconstruct(RunArgs),
    /// Sweep the naive inversion step count.
    SweepNaive(RunArgs),
    /// Fixed-point vs forward-step convergence across guidance weights.
    Stability(RunArgs),
    /// Watermark detection and classification after inversion.
    Watermark(RunArgs),
    /// Encoder vs decoder inversion on the toy autoencoder.
    Decoder(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; the built-in preset is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Reconstruct(a) => (ExperimentKind::Reconstruct, a),
        Command::SweepNaive(a) => (ExperimentKind::SweepNaive, a),
        Command::Stability(a) => (ExperimentKind::Stability, a),
        Command::Watermark(a) => (ExperimentKind::Watermark, a),
        Command::Decoder(a) => (ExperimentKind::Decoder, a),
    };
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => presets::default_config(kind),
    };
    if cfg.experiment != kind {
        anyhow::bail!(
            "config describes a `{}` experiment, not `{}`",
            cfg.experiment.name(),
            kind.name()
        );
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    let out = args
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(kind.name()));
    let result = run(&cfg)?;
    result.write(&out)?;
    println!("{}", serde_json::to_string_pretty(&result.summary)?);
    eprintln!("wrote {}", out.display());
    Ok(())
}
