//! Toy latent pipeline: a `tanh` decoder, its clamped pseudo-inverse encoder,
//! and decoder inversion by Adam on `||x - D(z)||^2`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::tensor::Tensor;
use crate::State;

pub const LATENT_DIM: usize = 16;
pub const DATA_DIM: usize = 64;
pub const DECODER_SEED: u64 = 42;

/// Clamp margin of the encoder: inputs are clamped to `[-1 + eps, 1 - eps]`.
pub const ENCODER_EPS: f64 = 1e-3;

/// Pre-activations below this magnitude count as in range.
pub const IN_RANGE_LIMIT: f64 = 3.0;

const MIN_SINGULAR_VALUE: f64 = 1e-3;

/// `D(z) = tanh(W z + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDecoder {
    weight: DMatrix<f64>,
    bias: State,
}

impl ToyDecoder {
    pub fn new(weight: DMatrix<f64>, bias: State) -> Result<Self> {
        let (rows, cols) = weight.shape();
        if rows <= cols {
            return Err(Error::InvalidParameter(format!(
                "decoder must be overcomplete, got {rows}x{cols}"
            )));
        }
        if bias.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                got: bias.len(),
            });
        }
        let smallest = weight.singular_values().min();
        if smallest.is_nan() || smallest < MIN_SINGULAR_VALUE {
            return Err(Error::InvalidParameter(format!(
                "decoder weight is near rank deficient (sigma_min = {smallest:e})"
            )));
        }
        Ok(Self { weight, bias })
    }

    /// Gaussian weights with variance `1 / d_latent` and a small bias.
    pub fn seeded(d_latent: usize, d_out: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (d_latent as f64).sqrt();
        let weight =
            DMatrix::from_fn(d_out, d_latent, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
        let bias = State::from_fn(d_out, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.1);
        Self::new(weight, bias)
    }

    pub fn latent_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn data_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &State {
        &self.bias
    }

    fn check_latent(&self, z: &State) -> Result<()> {
        if z.len() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim(),
                got: z.len(),
            });
        }
        ensure_finite(z, "latent")
    }

    pub fn preactivation(&self, z: &State) -> Result<State> {
        self.check_latent(z)?;
        Ok(&self.weight * z + &self.bias)
    }

    pub fn decode(&self, z: &State) -> Result<State> {
        Ok(self.preactivation(z)?.map(f64::tanh))
    }

    /// Loss `||x - D(z)||^2` and its gradient `-2 W^T ((x - D(z)) * (1 - D(z)^2))`.
    pub fn loss_and_gradient(&self, z: &State, x: &State) -> Result<(f64, State)> {
        if x.len() != self.data_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.data_dim(),
                got: x.len(),
            });
        }
        let y = self.decode(z)?;
        let diff = x - &y;
        let local = diff.component_mul(&y.map(|v| 1.0 - v * v));
        Ok((diff.norm_squared(), self.weight.tr_mul(&local) * -2.0))
    }

    pub fn in_range(&self, z: &State) -> Result<bool> {
        Ok(self.preactivation(z)?.amax() < IN_RANGE_LIMIT)
    }

    /// Latent drawn from `N(0, scale^2 I)` until every pre-activation is in range.
    pub fn sample_in_range(&self, scale: f64, rng: &mut impl Rng) -> Result<State> {
        let normal = Normal::new(0.0, scale).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for _ in 0..10_000 {
            let z = State::from_fn(self.latent_dim(), |_, _| rng.sample(normal));
            if self.in_range(&z)? {
                return Ok(z);
            }
        }
        Err(Error::InvalidParameter(format!(
            "no in-range latent found at scale {scale}"
        )))
    }

    /// Latent whose largest pre-activation lies beyond the encoder clamp but
    /// below `limit`, so the encoder sees a clipped coordinate.
    pub fn sample_clipped(&self, limit: f64, rng: &mut impl Rng) -> Result<State> {
        let clamp = (1.0 - ENCODER_EPS).atanh();
        for _ in 0..10_000 {
            let z = self.sample_in_range(0.5, rng)?;
            // push along the row of a random output unit until it saturates
            let unit = rng.random_range(0..self.data_dim());
            let row = self.weight.row(unit).transpose();
            let target = rng.random_range(clamp + 0.3..limit) * if rng.random() { 1.0 } else { -1.0 };
            let a = self.preactivation(&z)?[unit];
            let z = z + &row * ((target - a) / row.norm_squared());
            if self.preactivation(&z)?.amax() < limit {
                return Ok(z);
            }
        }
        Err(Error::InvalidParameter(format!(
            "no clipped latent found below {limit}"
        )))
    }

    /// Weight and bias as tensors (weight `[d_out, d_latent]` row-major).
    pub fn to_tensors(&self, seed: Option<u64>) -> Result<(Tensor, Tensor)> {
        let (rows, cols) = self.weight.shape();
        let w = Tensor::new(vec![rows, cols], self.weight.transpose().as_slice().to_vec(), seed)?;
        let b = Tensor::new(vec![rows], self.bias.as_slice().to_vec(), seed)?;
        Ok((w, b))
    }

    pub fn from_tensors(weight: &Tensor, bias: &Tensor) -> Result<Self> {
        let &[rows, cols] = weight.dims() else {
            return Err(Error::Tensor("decoder weight must be 2-D".into()));
        };
        let w = DMatrix::from_row_slice(rows, cols, &weight.data);
        Self::new(w, State::from_vec(bias.data.clone()))
    }
}

impl Default for ToyDecoder {
    fn default() -> Self {
        Self::seeded(LATENT_DIM, DATA_DIM, DECODER_SEED).expect("seeded decoder is well conditioned")
    }
}

/// `E(x) = W^+ (atanh(clamp(x, -1 + eps, 1 - eps)) - b)`.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    pinv: DMatrix<f64>,
    bias: State,
    eps: f64,
}

impl ToyEncoder {
    pub fn new(decoder: &ToyDecoder) -> Result<Self> {
        let pinv = decoder
            .weight
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(Self {
            pinv,
            bias: decoder.bias.clone(),
            eps: ENCODER_EPS,
        })
    }

    pub fn encode(&self, x: &State) -> Result<State> {
        if x.len() != self.bias.len() {
            return Err(Error::DimensionMismatch {
                expected: self.bias.len(),
                got: x.len(),
            });
        }
        ensure_finite(x, "encoder input")?;
        let lim = 1.0 - self.eps;
        let pre = x.map(|v| v.clamp(-lim, lim).atanh()) - &self.bias;
        Ok(&self.pinv * pre)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Relative reconstruction error counted as converged.
    pub tol: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 100,
            warmup: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            tol: 1e-6,
        }
    }
}

impl AdamConfig {
    /// 500 iterations with a 50-step warmup, for inputs the short run cannot finish.
    pub fn long() -> Self {
        Self {
            iterations: 500,
            warmup: 50,
            ..Self::default()
        }
    }

    /// Linear warmup then cosine decay to zero.
    pub fn rate(&self, k: usize) -> f64 {
        if k < self.warmup {
            return self.learning_rate * (k + 1) as f64 / self.warmup as f64;
        }
        let span = self.iterations.saturating_sub(self.warmup).max(1) as f64;
        let progress = (k - self.warmup) as f64 / span;
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderInversion {
    pub latent: State,
    /// `||x - D(z)|| / ||x||` at the returned latent.
    pub error: f64,
    /// Same quantity at the encoder initialisation.
    pub init_error: f64,
    pub converged: bool,
}

fn relative(x: &State, loss: f64) -> f64 {
    let norm = x.norm();
    if norm == 0.0 {
        loss.sqrt()
    } else {
        loss.sqrt() / norm
    }
}

/// Gradient-based decoder inversion started from the encoder. The best
/// iterate seen is returned, so the result never does worse than the encoder.
pub fn decoder_invert(
    decoder: &ToyDecoder,
    encoder: &ToyEncoder,
    x: &State,
    config: &AdamConfig,
) -> Result<DecoderInversion> {
    let mut z = encoder.encode(x)?;
    let (loss, mut grad) = decoder.loss_and_gradient(&z, x)?;
    let init_error = relative(x, loss);
    let mut best = (init_error, z.clone());
    let mut m = State::zeros(z.len());
    let mut v = State::zeros(z.len());
    for k in 0..config.iterations {
        if best.0 <= config.tol * 1e-3 {
            break;
        }
        m = m * config.beta1 + &grad * (1.0 - config.beta1);
        v = v * config.beta2 + grad.component_mul(&grad) * (1.0 - config.beta2);
        let m_hat = &m / (1.0 - config.beta1.powi(k as i32 + 1));
        let v_hat = &v / (1.0 - config.beta2.powi(k as i32 + 1));
        let step = m_hat.zip_map(&v_hat, |a, b| a / (b.sqrt() + config.epsilon));
        z -= step * config.rate(k);
        let (loss, g) = decoder.loss_and_gradient(&z, x)?;
        let err = relative(x, loss);
        if !err.is_finite() {
            break;
        }
        if err < best.0 {
            best = (err, z.clone());
        }
        grad = g;
    }
    Ok(DecoderInversion {
        latent: best.1,
        error: best.0,
        init_error,
        converged: best.0 <= config.tol,
    })
}
