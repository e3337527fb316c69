//! Data-prediction models `x_theta(x, t)`.
//!
//! Neural denoisers are replaced by closed-form posterior means
//! `E[x_0 | x_t]` under the forward process `x_t ~ N(alpha_t x_0, sigma_t^2 I)`:
//!
//! - [`GaussianDenoiser`]: prior `N(mu, s^2 I)`; the posterior mean is affine in `x`.
//! - [`MixtureDenoiser`]: prior `sum_k w_k N(mu_k, s_k^2 I)`.
//! - [`GuidedModel`]: classifier-free guidance combination of two models.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::schedule::NoiseSchedule;
use crate::State;

pub trait DataPredictionModel: Send + Sync {
    /// Dimension of the state space.
    fn dim(&self) -> usize;

    /// Predicts `x_0` from `x` at time `t`.
    fn evaluate(&self, x: &State, t: f64) -> Result<State>;

    /// Transposed Jacobian action `J(x, t)^T u`.
    fn vjp(&self, _x: &State, _t: f64, _u: &State) -> Result<State> {
        Err(Error::Unsupported("an analytic Jacobian"))
    }

    /// Upper bound on the Lipschitz constant of `x -> evaluate(x, t)`.
    fn lipschitz_bound(&self, _t: f64) -> Option<f64> {
        None
    }
}

impl<M: DataPredictionModel + ?Sized> DataPredictionModel for Arc<M> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn evaluate(&self, x: &State, t: f64) -> Result<State> {
        (**self).evaluate(x, t)
    }
    fn vjp(&self, x: &State, t: f64, u: &State) -> Result<State> {
        (**self).vjp(x, t, u)
    }
    fn lipschitz_bound(&self, t: f64) -> Option<f64> {
        (**self).lipschitz_bound(t)
    }
}

impl<M: DataPredictionModel + ?Sized> DataPredictionModel for Box<M> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn evaluate(&self, x: &State, t: f64) -> Result<State> {
        (**self).evaluate(x, t)
    }
    fn vjp(&self, x: &State, t: f64, u: &State) -> Result<State> {
        (**self).vjp(x, t, u)
    }
    fn lipschitz_bound(&self, t: f64) -> Option<f64> {
        (**self).lipschitz_bound(t)
    }
}

fn check_input(dim: usize, x: &State) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    ensure_finite(x, "model input")
}

/// `x_theta == 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroModel {
    pub dim: usize,
}

impl DataPredictionModel for ZeroModel {
    fn dim(&self) -> usize {
        self.dim
    }
    fn evaluate(&self, x: &State, _t: f64) -> Result<State> {
        check_input(self.dim, x)?;
        Ok(State::zeros(self.dim))
    }
    fn vjp(&self, _x: &State, _t: f64, _u: &State) -> Result<State> {
        Ok(State::zeros(self.dim))
    }
    fn lipschitz_bound(&self, _t: f64) -> Option<f64> {
        Some(0.0)
    }
}

/// Posterior mean under a Gaussian prior `N(mean, variance I)`:
/// `(s^2 alpha x + sigma^2 mu) / (alpha^2 s^2 + sigma^2)`.
#[derive(Debug, Clone)]
pub struct GaussianDenoiser {
    mean: State,
    variance: f64,
    schedule: NoiseSchedule,
}

impl GaussianDenoiser {
    pub fn new(mean: State, variance: f64, schedule: NoiseSchedule) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "prior variance must be positive, got {variance}"
            )));
        }
        ensure_finite(&mean, "prior mean")?;
        Ok(Self {
            mean,
            variance,
            schedule,
        })
    }

    pub fn mean(&self) -> &State {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// `(gain, offset_weight)` with `evaluate(x, t) = gain * x + offset_weight * mu`.
    pub fn coefficients(&self, t: f64) -> Result<(f64, f64)> {
        let p = self.schedule.eval(t)?;
        let denom = p.alpha * p.alpha * self.variance + p.sigma * p.sigma;
        Ok((
            self.variance * p.alpha / denom,
            p.sigma * p.sigma / denom,
        ))
    }
}

impl DataPredictionModel for GaussianDenoiser {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn evaluate(&self, x: &State, t: f64) -> Result<State> {
        check_input(self.dim(), x)?;
        let (gain, offset) = self.coefficients(t)?;
        Ok(x * gain + &self.mean * offset)
    }

    fn vjp(&self, _x: &State, t: f64, u: &State) -> Result<State> {
        let (gain, _) = self.coefficients(t)?;
        Ok(u * gain)
    }

    fn lipschitz_bound(&self, t: f64) -> Option<f64> {
        self.coefficients(t).ok().map(|(gain, _)| gain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
}

/// Posterior mean under an isotropic Gaussian-mixture prior.
///
/// Responsibilities are computed in log space with max subtraction so that
/// extreme log-SNR values do not underflow.
#[derive(Debug, Clone)]
pub struct MixtureDenoiser {
    weights: Vec<f64>,
    means: Vec<State>,
    variances: Vec<f64>,
    schedule: NoiseSchedule,
}

/// Per-component quantities at one `(x, t)`.
struct Posterior {
    responsibilities: Vec<f64>,
    /// component posterior means `m_k`
    component_means: Vec<State>,
    /// `s_k^2 alpha / v_k`
    gains: Vec<f64>,
    /// score of each component likelihood, `-(x - alpha mu_k) / v_k`
    scores: Vec<State>,
}

impl MixtureDenoiser {
    pub fn new(components: &[MixtureComponent], schedule: NoiseSchedule) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("mixture needs a component".into()));
        }
        let dim = components[0].mean.len();
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in components {
            if c.mean.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.mean.len(),
                });
            }
            if !(c.weight > 0.0 && c.variance > 0.0 && c.variance.is_finite()) {
                return Err(Error::InvalidParameter(
                    "mixture weights and variances must be positive".into(),
                ));
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights must sum to 1, got {total}"
            )));
        }
        Ok(Self {
            weights: components.iter().map(|c| c.weight).collect(),
            means: components
                .iter()
                .map(|c| State::from_column_slice(&c.mean))
                .collect(),
            variances: components.iter().map(|c| c.variance).collect(),
            schedule,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    fn posterior(&self, x: &State, t: f64) -> Result<Posterior> {
        let p = self.schedule.eval(t)?;
        let d = x.len() as f64;
        let k = self.weights.len();
        let mut log_r = Vec::with_capacity(k);
        let mut component_means = Vec::with_capacity(k);
        let mut gains = Vec::with_capacity(k);
        let mut scores = Vec::with_capacity(k);
        for ((w, mu), s2) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            let v = p.alpha * p.alpha * s2 + p.sigma * p.sigma;
            let diff = x - mu * p.alpha;
            log_r.push(w.ln() - 0.5 * d * v.ln() - diff.norm_squared() / (2.0 * v));
            let gain = s2 * p.alpha / v;
            component_means.push(x * gain + mu * (p.sigma * p.sigma / v));
            gains.push(gain);
            scores.push(diff / -v);
        }
        let max = log_r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut responsibilities: Vec<f64> = log_r.iter().map(|l| (l - max).exp()).collect();
        let norm: f64 = responsibilities.iter().sum();
        responsibilities.iter_mut().for_each(|r| *r /= norm);
        Ok(Posterior {
            responsibilities,
            component_means,
            gains,
            scores,
        })
    }
}

impl DataPredictionModel for MixtureDenoiser {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn evaluate(&self, x: &State, t: f64) -> Result<State> {
        check_input(self.dim(), x)?;
        let post = self.posterior(x, t)?;
        let mut out = State::zeros(x.len());
        for (g, m) in post.responsibilities.iter().zip(&post.component_means) {
            out.axpy(*g, m, 1.0);
        }
        Ok(out)
    }

    fn vjp(&self, x: &State, t: f64, u: &State) -> Result<State> {
        check_input(self.dim(), x)?;
        // J = sum_k g_k c_k I + sum_k g_k m_k (s_k - s_bar)^T
        let post = self.posterior(x, t)?;
        let mut score_bar = State::zeros(x.len());
        for (g, s) in post.responsibilities.iter().zip(&post.scores) {
            score_bar.axpy(*g, s, 1.0);
        }
        let mut out = State::zeros(x.len());
        for k in 0..post.responsibilities.len() {
            let g = post.responsibilities[k];
            out.axpy(g * post.gains[k], u, 1.0);
            let proj = post.component_means[k].dot(u);
            out.axpy(g * proj, &post.scores[k], 1.0);
            out.axpy(-g * proj, &score_bar, 1.0);
        }
        Ok(out)
    }
}

/// Classifier-free guidance: `omega * cond(x, t) - (1 - omega) * uncond(x, t)`.
///
/// The combination is `(|omega| + |1 - omega|) L`-Lipschitz when both
/// constituents are `L`-Lipschitz.
#[derive(Clone)]
pub struct GuidedModel {
    omega: f64,
    conditional: Arc<dyn DataPredictionModel>,
    unconditional: Arc<dyn DataPredictionModel>,
}

impl std::fmt::Debug for GuidedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GuidedModel")
            .field("omega", &self.omega)
            .finish_non_exhaustive()
    }
}

impl GuidedModel {
    pub fn new(
        omega: f64,
        conditional: Arc<dyn DataPredictionModel>,
        unconditional: Arc<dyn DataPredictionModel>,
    ) -> Result<Self> {
        if !omega.is_finite() {
            return Err(Error::InvalidParameter("guidance weight must be finite".into()));
        }
        if conditional.dim() != unconditional.dim() {
            return Err(Error::DimensionMismatch {
                expected: conditional.dim(),
                got: unconditional.dim(),
            });
        }
        Ok(Self {
            omega,
            conditional,
            unconditional,
        })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// `|omega| + |1 - omega|`.
    pub fn amplification(&self) -> f64 {
        self.omega.abs() + (1.0 - self.omega).abs()
    }

    /// Upper bound `(|omega| + |1 - omega|) * max(L_cond, L_uncond)`.
    pub fn guided_lipschitz_bound(&self, t: f64) -> Result<f64> {
        let lc = self
            .conditional
            .lipschitz_bound(t)
            .ok_or(Error::Unsupported("a conditional Lipschitz bound"))?;
        let lu = self
            .unconditional
            .lipschitz_bound(t)
            .ok_or(Error::Unsupported("an unconditional Lipschitz bound"))?;
        Ok(self.amplification() * lc.max(lu))
    }
}

impl DataPredictionModel for GuidedModel {
    fn dim(&self) -> usize {
        self.conditional.dim()
    }

    fn evaluate(&self, x: &State, t: f64) -> Result<State> {
        let cond = self.conditional.evaluate(x, t)?;
        if self.omega == 1.0 {
            return Ok(cond);
        }
        let uncond = self.unconditional.evaluate(x, t)?;
        Ok(cond * self.omega - uncond * (1.0 - self.omega))
    }

    fn vjp(&self, x: &State, t: f64, u: &State) -> Result<State> {
        let cond = self.conditional.vjp(x, t, u)?;
        if self.omega == 1.0 {
            return Ok(cond);
        }
        let uncond = self.unconditional.vjp(x, t, u)?;
        Ok(cond * self.omega - uncond * (1.0 - self.omega))
    }

    fn lipschitz_bound(&self, t: f64) -> Option<f64> {
        self.guided_lipschitz_bound(t).ok()
    }
}
