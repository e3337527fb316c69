//! Recovering the initial noise from a generated sample.
//!
//! All inverters walk the grid from the data end (`i = M`) back to the noise
//! end (`i = 0`). The implicit inverters solve, per coarse step, for the
//! preimage `z_{i-1}` whose forward solver step reproduces the observed
//! `z_i`, driving the residual `r = z' - z_i` below a relative tolerance.

mod stability;
mod update;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::DataPredictionModel;
use crate::schedule::{Point, TimeGrid};
use crate::solvers::ddim_coefficients;
use crate::State;

pub use stability::{check_nonexpansive, check_nonexpansive_pairs, FpiOperator};
pub use update::{StepSchedule, UpdateKind, UpdateRule};
use update::StepController;

/// Residual growth factor at which fixed-point iteration is declared divergent.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InversionMethod {
    /// Explicit inversion on a uniform regrid with `steps` steps.
    Naive { steps: usize },
    /// Backward-Euler inversion of DDIM.
    BackwardEuler,
    /// Inversion of DPM-Solver++(2M) with `substeps` fine naive substeps per coarse step.
    #[serde(rename = "high-order")]
    HighOrder2M { substeps: usize },
    /// Plain fixed-point iteration of the backward-Euler equation.
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub method: InversionMethod,
    pub update: UpdateRule,
    /// Relative residual tolerance `||z' - z_i|| / ||z_i||`.
    pub tol: f64,
    pub max_iters: usize,
}

impl InversionConfig {
    pub const DEFAULT_TOL: f64 = 1e-9;
    pub const DEFAULT_MAX_ITERS: usize = 500;

    pub fn new(method: InversionMethod) -> Self {
        Self {
            method,
            update: UpdateRule::forward_step(),
            tol: Self::DEFAULT_TOL,
            max_iters: Self::DEFAULT_MAX_ITERS,
        }
    }

    pub fn naive(steps: usize) -> Self {
        Self::new(InversionMethod::Naive { steps })
    }

    pub fn backward_euler() -> Self {
        Self::new(InversionMethod::BackwardEuler)
    }

    pub fn high_order(substeps: usize) -> Self {
        Self::new(InversionMethod::HighOrder2M { substeps })
    }

    pub fn fixed_point() -> Self {
        Self::new(InversionMethod::FixedPoint)
    }

    pub fn with_update(mut self, update: UpdateRule) -> Self {
        self.update = update;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.tol.is_nan() || self.tol <= 0.0 || self.max_iters == 0 {
            return Err(Error::InvalidParameter(
                "tolerance must be positive and max_iters at least 1".into(),
            ));
        }
        match self.method {
            InversionMethod::Naive { steps: 0 } => Err(Error::InvalidParameter(
                "naive inversion needs at least one step".into(),
            )),
            InversionMethod::HighOrder2M { substeps: 0 } => Err(Error::InvalidParameter(
                "fine substep count J must be at least 1".into(),
            )),
            _ => self.update.validate(),
        }
    }
}

/// Outcome of one coarse inversion step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Coarse index `i`; the step recovers `z_{i-1}` from `z_i`.
    pub step: usize,
    pub iterations: usize,
    /// Final relative residual.
    pub residual: f64,
    pub converged: bool,
    pub diverged: bool,
    /// Relative residual before each update.
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InversionReport {
    #[serde(with = "state_serde")]
    pub recovered: State,
    /// In inversion order (`i = M` first). Empty for naive inversion.
    pub steps: Vec<StepRecord>,
    pub wall_time_secs: f64,
}

impl InversionReport {
    pub fn all_converged(&self) -> bool {
        self.steps.iter().all(|s| s.converged)
    }

    pub fn any_diverged(&self) -> bool {
        self.steps.iter().any(|s| s.diverged)
    }

    pub fn total_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.iterations).sum()
    }

    pub fn max_residual(&self) -> f64 {
        self.steps.iter().map(|s| s.residual).fold(0.0, f64::max)
    }
}

mod state_serde {
    use crate::State;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &State, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(x.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<State, D::Error> {
        Ok(State::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// One explicit (naive) inversion step from `next` back to `prev`:
/// `z_prev = (sigma_prev / sigma_next) (z_next + alpha_next (e^{-h} - 1) x_theta(z_next, t_prev))`.
pub(crate) fn naive_step(
    model: &dyn DataPredictionModel,
    prev: &Point,
    next: &Point,
    z_next: &State,
) -> Result<State> {
    let (ratio, phi) = ddim_coefficients(prev, next);
    let pred = model.evaluate(z_next, prev.t)?;
    Ok((z_next + pred * phi) / ratio)
}

/// Naive DDIM inversion along `grid`, returning `z_{t_0}`.
pub fn naive_ddim_invert(
    model: &dyn DataPredictionModel,
    grid: &TimeGrid,
    x0: &State,
) -> Result<State> {
    check_dim(model, x0)?;
    let mut z = x0.clone();
    for i in (1..=grid.steps()).rev() {
        z = naive_step(model, &grid.point(i - 1), &grid.point(i), &z)?;
    }
    Ok(z)
}

/// Forward DDIM step applied to a candidate preimage: returns `(z', z' - z_next)`.
pub fn residual(
    model: &dyn DataPredictionModel,
    grid: &TimeGrid,
    step: usize,
    candidate: &State,
    z_next: &State,
) -> Result<(State, State)> {
    let (prev, next) = (grid.point(step - 1), grid.point(step));
    let (ratio, phi) = ddim_coefficients(&prev, &next);
    let forward = candidate * ratio - model.evaluate(candidate, prev.t)? * phi;
    let r = &forward - z_next;
    Ok((forward, r))
}

fn check_dim(model: &dyn DataPredictionModel, x: &State) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

fn relative(r: &State, target: &State) -> f64 {
    r.norm() / target.norm().max(1e-12)
}

type GradientFn<'a> = Box<dyn Fn(&State, &State) -> Result<State> + 'a>;
type MapFn<'a> = Box<dyn Fn(&State) -> Result<State> + 'a>;

/// How a candidate preimage is moved given its residual.
enum Updater<'a> {
    Forward,
    /// `A^T r` for the current iterate.
    Gradient(GradientFn<'a>),
    /// Direct application of the fixed-point map.
    FixedPoint(MapFn<'a>),
}

/// Iterates one implicit coarse step until the relative residual meets `tol`.
///
/// The returned state is the iterate with the smallest residual seen.
fn solve_step(
    step: usize,
    target: &State,
    init: State,
    forward: impl Fn(&State) -> Result<State>,
    updater: Updater<'_>,
    config: &InversionConfig,
) -> Result<(State, StepRecord)> {
    let mut controller = StepController::new(&config.update, step);
    let mut z = init;
    let mut best: Option<(f64, State)> = None;
    let mut curve = Vec::new();
    let mut iterations = 0;
    let mut initial = None;
    let mut diverged = false;
    let guard = matches!(updater, Updater::FixedPoint(_));

    loop {
        let res = match forward(&z) {
            Ok(fz) if fz.iter().all(|v| v.is_finite()) => {
                let r = fz - target;
                Some((relative(&r, target), r))
            }
            Ok(_) | Err(Error::NonFinite(_)) => None,
            Err(e) => return Err(e),
        };
        let Some((rel, r)) = res else {
            diverged = true;
            break;
        };
        curve.push(rel);
        let base = *initial.get_or_insert(rel);
        if best.as_ref().is_none_or(|(b, _)| rel < *b) {
            best = Some((rel, z.clone()));
        }
        if rel <= config.tol || iterations >= config.max_iters {
            break;
        }
        if guard && rel > DIVERGENCE_FACTOR * base.max(f64::MIN_POSITIVE) {
            diverged = true;
            break;
        }
        let next = match &updater {
            Updater::Forward => {
                let rho = controller.next(r.norm_squared());
                &z - r * rho
            }
            Updater::Gradient(grad) => {
                let rho = controller.next(r.norm_squared());
                let g = grad(&z, &r)?;
                &z - g * rho
            }
            Updater::FixedPoint(map) => match map(&z) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            },
        };
        if !next.iter().all(|v| v.is_finite()) {
            diverged = true;
            break;
        }
        z = next;
        iterations += 1;
    }
    let (residual, state) = best.unwrap_or((f64::INFINITY, z));
    Ok((
        state,
        StepRecord {
            step,
            iterations,
            residual,
            converged: residual <= config.tol,
            diverged,
            curve,
        },
    ))
}

/// Backward-Euler solve for one DDIM step `i`: find `z_{i-1}` with
/// `DDIM(z_{i-1}) = z_i`, starting from a naive step.
fn backward_euler_step(
    model: &dyn DataPredictionModel,
    prev: &Point,
    next: &Point,
    step: usize,
    z_next: &State,
    config: &InversionConfig,
) -> Result<(State, StepRecord)> {
    let (ratio, phi) = ddim_coefficients(prev, next);
    let init = naive_step(model, prev, next, z_next)?;
    let forward = |z: &State| -> Result<State> { Ok(z * ratio - model.evaluate(z, prev.t)? * phi) };
    let updater = match config.update.kind {
        UpdateKind::ForwardStep => Updater::Forward,
        UpdateKind::GradientDescent => {
            model.vjp(z_next, prev.t, z_next)?;
            Updater::Gradient(Box::new(move |z: &State, r: &State| {
                Ok(r * ratio - model.vjp(z, prev.t, r)? * phi)
            }))
        }
    };
    solve_step(step, z_next, init, forward, updater, config)
}

/// Backward-Euler inversion of DDIM sampling on `grid`.
pub fn backward_euler_invert(
    model: &dyn DataPredictionModel,
    grid: &TimeGrid,
    x0: &State,
    config: &InversionConfig,
) -> Result<InversionReport> {
    config.validate()?;
    check_dim(model, x0)?;
    let start = Instant::now();
    let mut z = x0.clone();
    let mut steps = Vec::with_capacity(grid.steps());
    for i in (1..=grid.steps()).rev() {
        let (next_z, record) =
            backward_euler_step(model, &grid.point(i - 1), &grid.point(i), i, &z, config)?;
        z = next_z;
        steps.push(record);
    }
    Ok(InversionReport {
        recovered: z,
        steps,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Inversion of DPM-Solver++(2M) sampling on `grid` with `substeps` (J) fine
/// naive substeps per coarse step.
///
/// For each `i = M..2` a fine naive path from `z_i` estimates `y_{i-1}` and
/// `y_{i-2}`; their predictions are frozen into the high-order term
/// `(x_theta(y_{i-1}) - x_theta(y_{i-2})) / (2 r_i)` and the remaining
/// first-order equation is solved implicitly. The closing step `i = 1` is a
/// plain backward-Euler DDIM solve.
pub fn invert_dpmpp2m(
    model: &dyn DataPredictionModel,
    grid: &TimeGrid,
    x0: &State,
    config: &InversionConfig,
) -> Result<InversionReport> {
    config.validate()?;
    check_dim(model, x0)?;
    let substeps = match config.method {
        InversionMethod::HighOrder2M { substeps } => substeps,
        _ => {
            return Err(Error::InvalidParameter(
                "2M inversion needs the high-order method".into(),
            ))
        }
    };
    let start = Instant::now();
    let m = grid.steps();
    let mut z = x0.clone();
    let mut steps = Vec::with_capacity(m);
    for i in (2..=m).rev() {
        // fine-grained naive path over fractional times t_{i - j/J}
        let mut y = z.clone();
        let mut y_prev = None;
        let mut from = grid.fractional_point(i, 0, substeps);
        for j in 1..=2 * substeps {
            let to = grid.fractional_point(i, j, substeps);
            y = naive_step(model, &to, &from, &y)?;
            if j == substeps {
                y_prev = Some(y.clone());
            }
            from = to;
        }
        let y_prev = y_prev.expect("J >= 1");
        let (older, prev, next) = (grid.point(i - 2), grid.point(i - 1), grid.point(i));
        let r_i = grid.r(i);
        let high_order = (model.evaluate(&y_prev, prev.t)? - model.evaluate(&y, older.t)?)
            * (0.5 / r_i);

        let (ratio, phi) = ddim_coefficients(&prev, &next);
        let forward = |c: &State| -> Result<State> {
            Ok(c * ratio - (model.evaluate(c, prev.t)? + &high_order) * phi)
        };
        let updater = match config.update.kind {
            UpdateKind::ForwardStep => Updater::Forward,
            UpdateKind::GradientDescent => {
                model.vjp(&z, prev.t, &z)?;
                Updater::Gradient(Box::new(move |c: &State, r: &State| {
                    Ok(r * ratio - model.vjp(c, prev.t, r)? * phi)
                }))
            }
        };
        let (next_z, record) = solve_step(i, &z, y_prev, forward, updater, config)?;
        z = next_z;
        steps.push(record);
    }
    if m >= 1 {
        let (next_z, record) =
            backward_euler_step(model, &grid.point(0), &grid.point(1), 1, &z, config)?;
        z = next_z;
        steps.push(record);
    }
    Ok(InversionReport {
        recovered: z,
        steps,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Fixed-point iteration `z <- F(z)` of the backward-Euler equation, with
/// `F(z) = (sigma_{i-1} / sigma_i) (alpha_i (e^{-h_i} - 1) x_theta(z, t_{i-1}) + z_i)`.
///
/// Divergence (residual growth beyond [`DIVERGENCE_FACTOR`]) stops the step
/// early and is reported rather than raised.
pub fn fpi_invert(
    model: &dyn DataPredictionModel,
    grid: &TimeGrid,
    x0: &State,
    config: &InversionConfig,
) -> Result<InversionReport> {
    config.validate()?;
    check_dim(model, x0)?;
    let start = Instant::now();
    let mut z = x0.clone();
    let mut steps = Vec::with_capacity(grid.steps());
    for i in (1..=grid.steps()).rev() {
        let (prev, next) = (grid.point(i - 1), grid.point(i));
        let op = FpiOperator::new(model, prev, next, z.clone());
        let (ratio, phi) = ddim_coefficients(&prev, &next);
        let init = op.apply(&z)?;
        let forward =
            |c: &State| -> Result<State> { Ok(c * ratio - model.evaluate(c, prev.t)? * phi) };
        let updater = Updater::FixedPoint(Box::new(|c: &State| op.apply(c)));
        let (next_z, record) = solve_step(i, &z, init, forward, updater, config)?;
        steps.push(record);
        if steps.last().is_some_and(|s| s.diverged) {
            z = next_z;
            // later steps would start from a meaningless state
            break;
        }
        z = next_z;
    }
    Ok(InversionReport {
        recovered: z,
        steps,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Dispatches on `config.method`. Naive inversion regrids to its own step count.
pub fn invert(
    model: &dyn DataPredictionModel,
    grid: &TimeGrid,
    x0: &State,
    config: &InversionConfig,
) -> Result<InversionReport> {
    config.validate()?;
    match config.method {
        InversionMethod::Naive { steps } => {
            let start = Instant::now();
            let recovered = if steps == grid.steps() {
                naive_ddim_invert(model, grid, x0)?
            } else {
                naive_ddim_invert(model, &grid.regrid(steps)?, x0)?
            };
            Ok(InversionReport {
                recovered,
                steps: Vec::new(),
                wall_time_secs: start.elapsed().as_secs_f64(),
            })
        }
        InversionMethod::BackwardEuler => backward_euler_invert(model, grid, x0, config),
        InversionMethod::HighOrder2M { .. } => invert_dpmpp2m(model, grid, x0, config),
        InversionMethod::FixedPoint => fpi_invert(model, grid, x0, config),
    }
}
