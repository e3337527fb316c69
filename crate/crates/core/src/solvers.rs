//! Sampling-direction solvers in log-SNR time.
//!
//! With `h = lambda_next - lambda_prev`, one DDIM step is
//!
//! ```text
//! x_next = (sigma_next / sigma_prev) x_prev - alpha_next (e^{-h} - 1) x_theta(x_prev, t_prev)
//! ```
//!
//! and DPM-Solver++(2M) replaces the prediction with
//! `(1 + 1/(2r)) D_prev - 1/(2r) D_older`, `r = h_prev / h`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::models::DataPredictionModel;
use crate::schedule::{NoiseSchedule, Point, Spacing, TimeGrid};
use crate::State;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Ddim,
    #[serde(rename = "dpmpp2m")]
    DpmSolverPp2M,
}

/// States along a time grid; `states[0]` is the noise at `t_0 = T`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<State>,
}

impl Trajectory {
    /// Data-end state `x_{t_M}`.
    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn first(&self) -> &State {
        &self.states[0]
    }
}

/// `(sigma_next / sigma_prev, alpha_next (e^{-h} - 1))`.
pub(crate) fn ddim_coefficients(prev: &Point, next: &Point) -> (f64, f64) {
    let h = next.lambda - prev.lambda;
    (next.sigma / prev.sigma, next.alpha * (-h).exp_m1())
}

/// DDIM update with a supplied prediction.
pub(crate) fn ddim_update(prev: &Point, next: &Point, x_prev: &State, pred: &State) -> State {
    let (ratio, phi) = ddim_coefficients(prev, next);
    x_prev * ratio - pred * phi
}

/// DPM-Solver++(2M) update with both predictions supplied.
pub(crate) fn dpmpp2m_update(
    older: &Point,
    prev: &Point,
    next: &Point,
    x_prev: &State,
    pred_prev: &State,
    pred_older: &State,
) -> State {
    let r = (prev.lambda - older.lambda) / (next.lambda - prev.lambda);
    let combined = pred_prev * (1.0 + 0.5 / r) - pred_older * (0.5 / r);
    ddim_update(prev, next, x_prev, &combined)
}

fn check_direction(prev: &Point, next: &Point) -> Result<()> {
    if next.lambda < prev.lambda {
        return Err(Error::InvalidParameter(format!(
            "sampling step must not decrease log-SNR ({} -> {})",
            prev.lambda, next.lambda
        )));
    }
    Ok(())
}

pub fn ddim_step(
    model: &dyn DataPredictionModel,
    schedule: &NoiseSchedule,
    x_prev: &State,
    t_prev: f64,
    t_next: f64,
) -> Result<State> {
    let prev = schedule.eval(t_prev)?;
    let next = schedule.eval(t_next)?;
    check_direction(&prev, &next)?;
    let pred = model.evaluate(x_prev, t_prev)?;
    let out = ddim_update(&prev, &next, x_prev, &pred);
    ensure_finite(&out, "DDIM step")?;
    Ok(out)
}

/// One DPM-Solver++(2M) step from `t_prev` to `t_next`; `pred_older` is the
/// cached prediction at `(x_{t_older}, t_older)`.
pub fn dpmpp2m_step(
    model: &dyn DataPredictionModel,
    schedule: &NoiseSchedule,
    x_prev: &State,
    pred_older: &State,
    times: [f64; 3],
) -> Result<State> {
    let [older, prev, next] = times.map(|t| schedule.eval(t));
    let (older, prev, next) = (older?, prev?, next?);
    if !(prev.lambda > older.lambda && next.lambda > prev.lambda) {
        return Err(Error::InvalidParameter(
            "2M step needs strictly increasing log-SNR (r must be positive)".into(),
        ));
    }
    let pred_prev = model.evaluate(x_prev, prev.t)?;
    let out = dpmpp2m_update(&older, &prev, &next, x_prev, &pred_prev, pred_older);
    ensure_finite(&out, "2M step")?;
    Ok(out)
}

/// Samples from `x_T` along `grid`. For the multistep solver the first step
/// is a DDIM step, since no earlier prediction exists.
pub fn sample(
    model: &dyn DataPredictionModel,
    grid: &TimeGrid,
    x_t: &State,
    kind: SolverKind,
) -> Result<Trajectory> {
    if x_t.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x_t.len(),
        });
    }
    ensure_finite(x_t, "initial noise")?;
    let m = grid.steps();
    let mut states = Vec::with_capacity(m + 1);
    states.push(x_t.clone());
    let mut older_pred: Option<State> = None;
    for i in 1..=m {
        let prev = grid.point(i - 1);
        let next = grid.point(i);
        let x_prev = &states[i - 1];
        let pred = model.evaluate(x_prev, prev.t)?;
        let x_next = match (kind, &older_pred) {
            (SolverKind::DpmSolverPp2M, Some(older)) => dpmpp2m_update(
                &grid.point(i - 2),
                &prev,
                &next,
                x_prev,
                &pred,
                older,
            ),
            _ => ddim_update(&prev, &next, x_prev, &pred),
        };
        ensure_finite(&x_next, "sampler state")?;
        states.push(x_next);
        older_pred = Some(pred);
    }
    Ok(Trajectory {
        grid: grid.clone(),
        states,
    })
}

/// Default number of fine steps for [`reference_trajectory`].
pub const REFERENCE_STEPS: usize = 2000;

/// Fine uniform-log-SNR DDIM trajectory, a proxy for the exact ODE solution.
pub fn reference_trajectory(
    model: &dyn DataPredictionModel,
    schedule: &NoiseSchedule,
    x_t: &State,
    fine_steps: usize,
) -> Result<Trajectory> {
    if fine_steps < 1000 {
        return Err(Error::InvalidParameter(format!(
            "reference trajectory needs at least 1000 steps, got {fine_steps}"
        )));
    }
    let grid = TimeGrid::new(schedule, fine_steps, Spacing::UniformLambda)?;
    sample(model, &grid, x_t, SolverKind::Ddim)
}
