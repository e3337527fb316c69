//! Nonexpansiveness of the fixed-point map under classifier-free guidance.
//!
//! For one coarse step the fixed-point map is
//! `F(z) = (sigma_{i-1} / sigma_i) (alpha_i (e^{-h_i} - 1) x_theta(z, t_{i-1}) + z_i)`.
//! `F` is nonexpansive whenever `x_theta(., t_{i-1})` is Lipschitz with
//! constant at most `sigma_i / (sigma_{i-1} alpha_i |e^{-h_i} - 1|)`; with a
//! guided model each constituent must stay below that threshold divided by
//! `|omega| + |1 - omega|`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::models::DataPredictionModel;
use crate::schedule::Point;
use crate::solvers::ddim_coefficients;
use crate::State;

/// Relative slack allowed when comparing `||F(a) - F(b)||` against `||a - b||`.
const NONEXPANSIVE_SLACK: f64 = 1e-12;

pub struct FpiOperator<'a> {
    model: &'a dyn DataPredictionModel,
    prev: Point,
    next: Point,
    target: State,
}

impl<'a> FpiOperator<'a> {
    /// Map for the step `prev -> next` whose observed data-side state is `target`.
    pub fn new(model: &'a dyn DataPredictionModel, prev: Point, next: Point, target: State) -> Self {
        Self {
            model,
            prev,
            next,
            target,
        }
    }

    pub fn apply(&self, z: &State) -> Result<State> {
        let (ratio, phi) = ddim_coefficients(&self.prev, &self.next);
        let pred = self.model.evaluate(z, self.prev.t)?;
        Ok((pred * phi + &self.target) / ratio)
    }

    /// `(sigma_{i-1} / sigma_i) alpha_i |e^{-h_i} - 1|`; `F` is `gain * L`-Lipschitz
    /// when the model is `L`-Lipschitz.
    pub fn gain(&self) -> f64 {
        let (ratio, phi) = ddim_coefficients(&self.prev, &self.next);
        phi.abs() / ratio
    }

    /// Largest model Lipschitz constant that keeps `F` nonexpansive.
    pub fn threshold(&self) -> f64 {
        1.0 / self.gain()
    }

    /// Whether the model's own Lipschitz bound satisfies the threshold.
    pub fn premise_holds(&self) -> Option<bool> {
        self.model
            .lipschitz_bound(self.prev.t)
            .map(|l| l <= self.threshold() * (1.0 + NONEXPANSIVE_SLACK))
    }

    /// `||F(a) - F(b)|| / ||a - b||`.
    pub fn expansion(&self, a: &State, b: &State) -> Result<f64> {
        let fa = self.apply(a)?;
        let fb = self.apply(b)?;
        Ok((fa - fb).norm() / (a - b).norm())
    }
}

/// True iff no probe pair is expanded by `F`.
pub fn check_nonexpansive_pairs(op: &FpiOperator<'_>, pairs: &[(State, State)]) -> Result<bool> {
    for (a, b) in pairs {
        if op.expansion(a, b)? > 1.0 + NONEXPANSIVE_SLACK {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Checks nonexpansiveness of `F` on `n_probes` random pairs drawn around the
/// target state.
pub fn check_nonexpansive(
    op: &FpiOperator<'_>,
    n_probes: usize,
    rng: &mut impl Rng,
) -> Result<bool> {
    let d = op.target.len();
    let scale = 1.0 + op.target.norm() / (d as f64).sqrt();
    for _ in 0..n_probes {
        let a = State::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
        let b = State::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
        if op.expansion(&a, &b)? > 1.0 + NONEXPANSIVE_SLACK {
            return Ok(false);
        }
    }
    Ok(true)
}
