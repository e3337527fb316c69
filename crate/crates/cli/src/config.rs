//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use dpm_inversion::latent::AdamConfig;
use dpm_inversion::{
    DataPredictionModel, GaussianDenoiser, GuidedModel, InversionConfig, InversionMethod,
    MixtureComponent, MixtureDenoiser, NoiseSchedule, ScheduleKind, SolverKind, Spacing, State,
    StepSchedule, Tensor, TimeGrid, UpdateKind, UpdateRule, ZeroModel,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Reconstruct,
    SweepNaive,
    Stability,
    Watermark,
    Decoder,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Reconstruct => "reconstruct",
            ExperimentKind::SweepNaive => "sweep-naive",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Watermark => "watermark",
            ExperimentKind::Decoder => "decoder",
        }
    }
}

/// A vector given as a constant, a pattern repeated to the state dimension, or
/// a tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Constant(f64),
    Pattern(Vec<f64>),
    File { file: PathBuf },
}

impl VectorSpec {
    pub fn resolve(&self, dim: usize, base: &Path) -> Result<State> {
        match self {
            VectorSpec::Constant(c) => Ok(State::from_element(dim, *c)),
            VectorSpec::Pattern(p) => {
                if p.is_empty() {
                    bail!("empty mean pattern");
                }
                Ok(State::from_fn(dim, |i, _| p[i % p.len()]))
            }
            VectorSpec::File { file } => {
                let path = base.join(file);
                let t = Tensor::load(&path)
                    .with_context(|| format!("reading mean tensor {}", path.display()))?;
                if t.data.len() != dim {
                    bail!("mean tensor {} has {} values, expected {dim}", path.display(), t.data.len());
                }
                Ok(State::from_vec(t.data))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: VectorSpec,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Zero,
    Gaussian {
        mean: VectorSpec,
        variance: f64,
    },
    Mixture {
        components: Vec<ComponentSpec>,
    },
    Guided {
        omega: f64,
        conditional: Box<ModelSpec>,
        unconditional: Box<ModelSpec>,
    },
}

impl ModelSpec {
    pub fn build(
        &self,
        dim: usize,
        schedule: NoiseSchedule,
        base: &Path,
    ) -> Result<Arc<dyn DataPredictionModel>> {
        Ok(match self {
            ModelSpec::Zero => Arc::new(ZeroModel { dim }),
            ModelSpec::Gaussian { mean, variance } => Arc::new(GaussianDenoiser::new(
                mean.resolve(dim, base)?,
                *variance,
                schedule,
            )?),
            ModelSpec::Mixture { components } => {
                let comps = components
                    .iter()
                    .map(|c| {
                        Ok(MixtureComponent {
                            weight: c.weight,
                            mean: c.mean.resolve(dim, base)?.as_slice().to_vec(),
                            variance: c.variance,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Arc::new(MixtureDenoiser::new(&comps, schedule)?)
            }
            ModelSpec::Guided {
                omega,
                conditional,
                unconditional,
            } => Arc::new(GuidedModel::new(
                *omega,
                conditional.build(dim, schedule, base)?,
                unconditional.build(dim, schedule, base)?,
            )?),
        })
    }

    /// Copy with the guidance weight replaced (guided models only).
    pub fn with_omega(&self, value: f64) -> Result<Self> {
        match self {
            ModelSpec::Guided {
                conditional,
                unconditional,
                ..
            } => Ok(ModelSpec::Guided {
                omega: value,
                conditional: conditional.clone(),
                unconditional: unconditional.clone(),
            }),
            _ => bail!("guidance sweep needs a guided model"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(flatten)]
    pub kind: ScheduleKind,
    #[serde(default = "one")]
    pub end: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::uniform_log_snr_default(),
            end: 1.0,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::new(self.kind, self.end)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub steps: usize,
    #[serde(default = "uniform_lambda")]
    pub spacing: Spacing,
}

fn uniform_lambda() -> Spacing {
    Spacing::UniformLambda
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            steps: 50,
            spacing: Spacing::UniformLambda,
        }
    }
}

/// One inversion method in a head-to-head comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(flatten)]
    pub method: InversionMethod,
    #[serde(default)]
    pub update: Option<UpdateKind>,
    /// Constant initial step size (rho or learning rate).
    #[serde(default)]
    pub step: Option<f64>,
    /// `numerator / i` schedule for the implicit inverters.
    #[serde(default)]
    pub step_numerator: Option<f64>,
    #[serde(default)]
    pub warmup: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    /// Step sizes tried in turn until every coarse step converges.
    #[serde(default)]
    pub step_sweep: Vec<f64>,
    /// Invert on a regridded coarse grid with this many steps.
    #[serde(default)]
    pub grid_steps: Option<usize>,
}

impl MethodSpec {
    pub fn new(method: InversionMethod) -> Self {
        Self {
            label: None,
            method,
            update: None,
            step: None,
            step_numerator: None,
            warmup: None,
            tol: None,
            max_iters: None,
            step_sweep: vec![],
            grid_steps: None,
        }
    }

    pub fn labelled(mut self, label: &str) -> Self {
        self.label = Some(label.to_string());
        self
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let base = match self.method {
            InversionMethod::Naive { steps } => return format!("naive@{steps}"),
            InversionMethod::BackwardEuler => "backward-euler".to_string(),
            InversionMethod::HighOrder2M { substeps } => format!("high-order-j{substeps}"),
            InversionMethod::FixedPoint => "fpi".to_string(),
        };
        match self.grid_steps {
            Some(m) => format!("{base}@{m}"),
            None => base,
        }
    }

    /// Inversion configuration with the first (or only) step size.
    pub fn inversion_config(&self) -> InversionConfig {
        self.config_with_step(self.step)
    }

    /// One configuration per swept step size, or the base configuration.
    pub fn sweep_configs(&self) -> Vec<InversionConfig> {
        if self.step_sweep.is_empty() {
            vec![self.inversion_config()]
        } else {
            self.step_sweep
                .iter()
                .map(|&s| self.config_with_step(Some(s)))
                .collect()
        }
    }

    fn config_with_step(&self, step: Option<f64>) -> InversionConfig {
        let mut update = match self.update {
            Some(UpdateKind::GradientDescent) => UpdateRule::gradient_descent(),
            _ => UpdateRule::forward_step(),
        };
        if let Some(n) = self.step_numerator {
            update.step = StepSchedule::InverseIndex {
                numerator: n,
                first: step.unwrap_or(1.0),
            };
        } else if let Some(s) = step {
            update.step = StepSchedule::Constant { value: s };
        }
        if let Some(w) = self.warmup {
            update.warmup_steps = w;
        }
        let mut cfg = InversionConfig::new(self.method).with_update(update);
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if let Some(m) = self.max_iters {
            cfg.max_iters = m;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub steps: Vec<usize>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            steps: vec![10, 50, 100, 500, 1000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySpec {
    pub omegas: Vec<f64>,
}

impl Default for StabilitySpec {
    fn default() -> Self {
        Self {
            omegas: vec![1.0, 2.0, 3.0, 5.0, 7.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkSpec {
    /// Side of the square noise field; the state dimension is `n * n`.
    pub n: usize,
    #[serde(default)]
    pub key_seed: u64,
    /// Base constants `[re, im]`, one key each.
    #[serde(default = "default_bases")]
    pub bases: Vec<[f64; 2]>,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_bases() -> Vec<[f64; 2]> {
    dpm_inversion::watermark::default_bases()
        .iter()
        .map(|c| [c.re, c.im])
        .collect()
}

fn default_jitter() -> f64 {
    dpm_inversion::watermark::RING_JITTER
}

impl Default for WatermarkSpec {
    fn default() -> Self {
        Self {
            n: 16,
            key_seed: 0,
            bases: default_bases(),
            jitter: default_jitter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    #[serde(default)]
    pub adam: AdamConfigSpec,
    /// Std of in-range latents before rejection.
    #[serde(default = "half")]
    pub in_range_scale: f64,
    /// Upper bound on the saturated pre-activation of clipped inputs.
    #[serde(default = "five")]
    pub clipped_limit: f64,
    /// Optional decoder weights `[d_out, d_latent]` and bias `[d_out]`.
    #[serde(default)]
    pub weight_file: Option<PathBuf>,
    #[serde(default)]
    pub bias_file: Option<PathBuf>,
}

fn half() -> f64 {
    0.5
}

fn five() -> f64 {
    5.0
}

impl Default for DecoderSpec {
    fn default() -> Self {
        Self {
            adam: AdamConfigSpec::default(),
            in_range_scale: 0.5,
            clipped_limit: 5.0,
            weight_file: None,
            bias_file: None,
        }
    }
}

/// Adam settings with every field optional.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AdamConfigSpec {
    pub learning_rate: Option<f64>,
    pub iterations: Option<usize>,
    pub warmup: Option<usize>,
    pub tol: Option<f64>,
}

impl AdamConfigSpec {
    pub fn build(&self) -> AdamConfig {
        let d = AdamConfig::default();
        AdamConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            iterations: self.iterations.unwrap_or(d.iterations),
            warmup: self.warmup.unwrap_or(d.warmup),
            tol: self.tol.unwrap_or(d.tol),
            ..d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// State dimension (ignored by the watermark experiment, which uses `n * n`).
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default = "zero_model")]
    pub model: ModelSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "ddim")]
    pub solver: SolverKind,
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub stability: Option<StabilitySpec>,
    #[serde(default)]
    pub watermark: Option<WatermarkSpec>,
    #[serde(default)]
    pub decoder: Option<DecoderSpec>,
    /// Directory that relative file references resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_trials() -> usize {
    20
}

fn default_dim() -> usize {
    16
}

fn zero_model() -> ModelSpec {
    ModelSpec::Zero
}

fn ddim() -> SolverKind {
    SolverKind::Ddim
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind, model: ModelSpec) -> Self {
        Self {
            experiment,
            trials: default_trials(),
            seed: 0,
            output: None,
            dim: default_dim(),
            schedule: ScheduleSpec::default(),
            model,
            grid: GridSpec::default(),
            solver: SolverKind::Ddim,
            methods: vec![],
            sweep: None,
            stability: None,
            watermark: None,
            decoder: None,
            base_dir: PathBuf::from("."),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| anyhow::anyhow!("config error: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        if self.dim == 0 {
            bail!("dim must be at least 1");
        }
        if self.grid.steps == 0 {
            bail!("grid.steps must be at least 1");
        }
        self.schedule.build()?;
        for m in &self.methods {
            for c in m.sweep_configs() {
                c.validate()
                    .with_context(|| format!("method {}", m.label()))?;
            }
        }
        match self.experiment {
            ExperimentKind::Reconstruct if self.methods.is_empty() => {
                bail!("reconstruct needs at least one [[methods]] entry")
            }
            ExperimentKind::Stability if !matches!(self.model, ModelSpec::Guided { .. }) => {
                bail!("stability needs a guided model")
            }
            ExperimentKind::Watermark => {
                let n = self.watermark.clone().unwrap_or_default().n;
                if !n.is_power_of_two() {
                    bail!("watermark.n must be a power of two, got {n}");
                }
                if self.watermark.clone().unwrap_or_default().bases.len() < 2 {
                    bail!("watermark needs at least two keys");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// State dimension actually used by the experiment.
    pub fn state_dim(&self) -> usize {
        match self.experiment {
            ExperimentKind::Watermark => {
                let n = self.watermark.clone().unwrap_or_default().n;
                n * n
            }
            _ => self.dim,
        }
    }

    pub fn build_schedule(&self) -> Result<NoiseSchedule> {
        self.schedule.build()
    }

    pub fn build_grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::new(
            &self.build_schedule()?,
            self.grid.steps,
            self.grid.spacing,
        )?)
    }

    pub fn build_model(&self) -> Result<Arc<dyn DataPredictionModel>> {
        self.model
            .build(self.state_dim(), self.build_schedule()?, &self.base_dir)
    }
}
