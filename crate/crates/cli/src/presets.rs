//! Built-in configurations used when no config file is given.

use dpm_inversion::{InversionMethod, SolverKind};

use crate::config::{
    ComponentSpec, DecoderSpec, ExperimentConfig, ExperimentKind, GridSpec, MethodSpec, ModelSpec,
    StabilitySpec, SweepSpec, VectorSpec, WatermarkSpec,
};

/// Guidance weight of the default guided model.
pub const GUIDED_OMEGA: f64 = 3.0;

/// Gaussian data with a patterned mean, variance 0.3.
pub fn gaussian() -> ModelSpec {
    ModelSpec::Gaussian {
        mean: VectorSpec::Pattern(vec![0.5, 0.1, -0.3]),
        variance: 0.3,
    }
}

/// Two well-separated components with unequal weights and variances.
pub fn mixture() -> ModelSpec {
    ModelSpec::Mixture {
        components: vec![
            ComponentSpec {
                weight: 0.6,
                mean: VectorSpec::Pattern(vec![1.0, 0.5, -0.5]),
                variance: 0.1,
            },
            ComponentSpec {
                weight: 0.4,
                mean: VectorSpec::Pattern(vec![-1.0, 0.0, 0.5]),
                variance: 0.3,
            },
        ],
    }
}

/// Classifier-free guidance between a conditional and an unconditional mixture.
pub fn guided(omega: f64) -> ModelSpec {
    let component = |w: f64, m: Vec<f64>, v: f64| ComponentSpec {
        weight: w,
        mean: VectorSpec::Pattern(m),
        variance: v,
    };
    ModelSpec::Guided {
        omega,
        conditional: Box::new(ModelSpec::Mixture {
            components: vec![
                component(0.7, vec![0.6, 0.3], 0.1),
                component(0.3, vec![0.2, -0.2], 0.1),
            ],
        }),
        unconditional: Box::new(ModelSpec::Mixture {
            components: vec![
                component(0.5, vec![0.6, 0.3], 0.1),
                component(0.5, vec![-0.4, -0.2], 0.1),
            ],
        }),
    }
}

pub fn naive(steps: usize) -> MethodSpec {
    MethodSpec::new(InversionMethod::Naive { steps })
}

pub fn backward_euler() -> MethodSpec {
    MethodSpec::new(InversionMethod::BackwardEuler)
}

pub fn high_order(substeps: usize) -> MethodSpec {
    MethodSpec::new(InversionMethod::HighOrder2M { substeps })
}

fn ddim(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.solver = SolverKind::Ddim;
    cfg.grid = GridSpec {
        steps: 50,
        ..GridSpec::default()
    };
    cfg
}

fn dpmpp2m(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.solver = SolverKind::DpmSolverPp2M;
    cfg.grid = GridSpec {
        steps: 10,
        ..GridSpec::default()
    };
    cfg
}

/// Mixture, DDIM with 50 steps: naive at 50 and 1000 steps against backward Euler.
pub fn reconstruct_ddim() -> ExperimentConfig {
    let mut cfg = ddim(ExperimentConfig::new(ExperimentKind::Reconstruct, mixture()));
    cfg.trials = 30;
    cfg.methods = vec![naive(50), naive(1000), backward_euler()];
    cfg
}

/// Mixture, DPM-Solver++(2M) with 10 steps.
pub fn reconstruct_dpmpp2m() -> ExperimentConfig {
    let mut cfg = dpmpp2m(ExperimentConfig::new(ExperimentKind::Reconstruct, mixture()));
    cfg.trials = 30;
    let mut be_fine = backward_euler();
    be_fine.grid_steps = Some(50);
    cfg.methods = vec![naive(1000), be_fine, high_order(10)];
    cfg
}

/// Naive step sweep against high-order inversion on the 2M sampler.
pub fn sweep_naive() -> ExperimentConfig {
    let mut cfg = dpmpp2m(ExperimentConfig::new(ExperimentKind::SweepNaive, mixture()));
    cfg.trials = 30;
    cfg.sweep = Some(SweepSpec::default());
    cfg.methods = vec![high_order(10)];
    cfg
}

pub fn stability() -> ExperimentConfig {
    let mut cfg = ddim(ExperimentConfig::new(
        ExperimentKind::Stability,
        guided(GUIDED_OMEGA),
    ));
    cfg.trials = 20;
    cfg.stability = Some(StabilitySpec::default());
    cfg
}

/// Watermarked 16x16 noise through the 2M sampler on the mixture.
pub fn watermark() -> ExperimentConfig {
    let mut cfg = dpmpp2m(ExperimentConfig::new(ExperimentKind::Watermark, mixture()));
    cfg.trials = 50;
    cfg.watermark = Some(WatermarkSpec::default());
    cfg.methods = vec![naive(10), naive(1000), high_order(10)];
    cfg
}

pub fn decoder() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Decoder, ModelSpec::Zero);
    cfg.trials = 50;
    cfg.decoder = Some(DecoderSpec::default());
    cfg
}

pub fn default_config(kind: ExperimentKind) -> ExperimentConfig {
    match kind {
        ExperimentKind::Reconstruct => reconstruct_ddim(),
        ExperimentKind::SweepNaive => sweep_naive(),
        ExperimentKind::Stability => stability(),
        ExperimentKind::Watermark => watermark(),
        ExperimentKind::Decoder => decoder(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_roundtrip() {
        for kind in [
            ExperimentKind::Reconstruct,
            ExperimentKind::SweepNaive,
            ExperimentKind::Stability,
            ExperimentKind::Watermark,
            ExperimentKind::Decoder,
        ] {
            let cfg = default_config(kind);
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back.to_toml().unwrap(), cfg.to_toml().unwrap());
            cfg.build_model().unwrap();
        }
    }
}
