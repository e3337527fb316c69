//! Variance-preserving noise schedules and the discrete time grids that
//! samplers and inverters walk along.
//!
//! Every schedule satisfies `alpha(t)^2 + sigma(t)^2 = 1` and has a strictly
//! decreasing log-SNR `lambda(t) = ln(alpha / sigma)`. Singular endpoints are
//! clamped to `[eps, T - eps]` with `eps = 1e-4 * T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative clamp applied at singular schedule endpoints.
pub const ENDPOINT_CLAMP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// `alpha = cos(pi t / 2T)`, `sigma = sin(pi t / 2T)`.
    VpCosine,
    /// Linear-beta VP process: `ln alpha = -(b1 - b0) s^2 / 4 - b0 s / 2`, `s = t / T`.
    VpLinear { beta_min: f64, beta_max: f64 },
    /// Log-SNR linear in time from `lambda_max` at `t = 0` to `lambda_min` at `t = T`.
    UniformLogSnr { lambda_max: f64, lambda_min: f64 },
}

impl ScheduleKind {
    pub fn uniform_log_snr_default() -> Self {
        ScheduleKind::UniformLogSnr {
            lambda_max: 2.3,
            lambda_min: -5.8,
        }
    }

    pub fn vp_linear_default() -> Self {
        ScheduleKind::VpLinear {
            beta_min: 0.1,
            beta_max: 20.0,
        }
    }
}

/// Schedule coefficients at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub t: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    end: f64,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, end: f64) -> Result<Self> {
        if !(end.is_finite() && end > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "terminal time must be positive, got {end}"
            )));
        }
        match kind {
            ScheduleKind::VpCosine => {}
            ScheduleKind::VpLinear { beta_min, beta_max } => {
                if !(beta_min >= 0.0 && beta_max > 0.0 && beta_max >= beta_min)
                    || !beta_max.is_finite()
                {
                    return Err(Error::InvalidParameter(format!(
                        "linear beta schedule needs 0 <= beta_min <= beta_max, beta_max > 0 \
                         (got {beta_min}, {beta_max})"
                    )));
                }
            }
            ScheduleKind::UniformLogSnr {
                lambda_max,
                lambda_min,
            } => {
                if !(lambda_max.is_finite() && lambda_min.is_finite() && lambda_max > lambda_min) {
                    return Err(Error::InvalidParameter(format!(
                        "log-SNR range must satisfy lambda_max > lambda_min \
                         (got {lambda_max}, {lambda_min})"
                    )));
                }
            }
        }
        Ok(Self { kind, end })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Terminal time `T`.
    pub fn end(&self) -> f64 {
        self.end
    }

    fn clamped(&self) -> bool {
        !matches!(self.kind, ScheduleKind::UniformLogSnr { .. })
    }

    /// Smallest time a grid may use (data end).
    pub fn t_min(&self) -> f64 {
        if self.clamped() {
            ENDPOINT_CLAMP * self.end
        } else {
            0.0
        }
    }

    /// Largest time a grid may use (noise end).
    pub fn t_max(&self) -> f64 {
        if self.clamped() {
            self.end - ENDPOINT_CLAMP * self.end
        } else {
            self.end
        }
    }

    /// `(lambda at t_min, lambda at t_max)`, i.e. `(lambda_max, lambda_min)`.
    pub fn lambda_range(&self) -> (f64, f64) {
        (self.lambda_at(self.t_min()), self.lambda_at(self.t_max()))
    }

    /// Evaluates `(alpha, sigma, lambda)` at `t`, clamping into `[t_min, t_max]`.
    pub fn eval(&self, t: f64) -> Result<Point> {
        if !(t >= 0.0 && t <= self.end) {
            return Err(Error::TimeOutOfRange { t, end: self.end });
        }
        let t = t.clamp(self.t_min(), self.t_max());
        Ok(self.point_unchecked(t))
    }

    fn lambda_at(&self, t: f64) -> f64 {
        self.point_unchecked(t).lambda
    }

    fn point_unchecked(&self, t: f64) -> Point {
        let s = t / self.end;
        match self.kind {
            ScheduleKind::VpCosine => {
                let theta = std::f64::consts::FRAC_PI_2 * s;
                let (sigma, alpha) = theta.sin_cos();
                Point {
                    t,
                    alpha,
                    sigma,
                    lambda: -theta.tan().ln(),
                }
            }
            ScheduleKind::VpLinear { beta_min, beta_max } => {
                let log_alpha = -(beta_max - beta_min) * s * s / 4.0 - beta_min * s / 2.0;
                // sigma^2 = 1 - alpha^2 = -expm1(2 ln alpha)
                let sigma_sq = -(2.0 * log_alpha).exp_m1();
                let log_sigma = 0.5 * sigma_sq.ln();
                Point {
                    t,
                    alpha: log_alpha.exp(),
                    sigma: sigma_sq.sqrt(),
                    lambda: log_alpha - log_sigma,
                }
            }
            ScheduleKind::UniformLogSnr {
                lambda_max,
                lambda_min,
            } => {
                let lambda = lambda_max - (lambda_max - lambda_min) * s;
                from_lambda(t, lambda)
            }
        }
    }

    /// Inverse of `lambda(t)`; the result is clamped into `[t_min, t_max]`.
    pub fn time_of_lambda(&self, lambda: f64) -> f64 {
        let s = match self.kind {
            ScheduleKind::VpCosine => (-lambda).exp().atan() / std::f64::consts::FRAC_PI_2,
            ScheduleKind::VpLinear { beta_min, beta_max } => {
                let log_alpha = -0.5 * (-2.0 * lambda).exp().ln_1p();
                let quad = (beta_max - beta_min) / 4.0;
                let lin = beta_min / 2.0;
                if quad == 0.0 {
                    -log_alpha / lin
                } else {
                    // quad s^2 + lin s + log_alpha = 0, positive root
                    (-lin + (lin * lin - 4.0 * quad * log_alpha).sqrt()) / (2.0 * quad)
                }
            }
            ScheduleKind::UniformLogSnr {
                lambda_max,
                lambda_min,
            } => (lambda_max - lambda) / (lambda_max - lambda_min),
        };
        (s * self.end).clamp(self.t_min(), self.t_max())
    }

    /// Coefficients for a given log-SNR; `t` is recovered by inversion.
    pub fn point_at_lambda(&self, lambda: f64) -> Point {
        let t = self.time_of_lambda(lambda);
        let mut p = from_lambda(t, lambda);
        // prefer closed-form values when the roundtrip lands on a clamp
        if t == self.t_min() || t == self.t_max() {
            p = self.point_unchecked(t);
        }
        p
    }
}

fn from_lambda(t: f64, lambda: f64) -> Point {
    // alpha^2 = sigmoid(2 lambda), sigma^2 = sigmoid(-2 lambda)
    let log_alpha = -0.5 * (-2.0 * lambda).exp().ln_1p();
    let log_sigma = -0.5 * (2.0 * lambda).exp().ln_1p();
    Point {
        t,
        alpha: log_alpha.exp(),
        sigma: log_sigma.exp(),
        lambda,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    UniformT,
    UniformLambda,
}

/// Ordered times `t_0 = T > t_1 > ... > t_M ~ 0`; index 0 is the noise end.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    schedule: NoiseSchedule,
    spacing: Option<Spacing>,
    points: Vec<Point>,
}

impl TimeGrid {
    pub fn new(schedule: &NoiseSchedule, steps: usize, spacing: Spacing) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("grid needs at least one step".into()));
        }
        let (t_hi, t_lo) = (schedule.t_max(), schedule.t_min());
        let m = steps as f64;
        let points = match spacing {
            Spacing::UniformT => (0..=steps)
                .map(|i| {
                    let t = if i == steps {
                        t_lo
                    } else {
                        t_hi - (t_hi - t_lo) * (i as f64) / m
                    };
                    schedule.point_unchecked(t)
                })
                .collect(),
            Spacing::UniformLambda => {
                let lam_start = schedule.point_unchecked(t_hi).lambda;
                let lam_end = schedule.point_unchecked(t_lo).lambda;
                let h = (lam_end - lam_start) / m;
                (0..=steps)
                    .map(|i| match i {
                        0 => schedule.point_unchecked(t_hi),
                        i if i == steps => schedule.point_unchecked(t_lo),
                        i => from_lambda(
                            schedule.time_of_lambda(lam_start + h * i as f64),
                            lam_start + h * i as f64,
                        ),
                    })
                    .collect()
            }
        };
        let grid = Self {
            schedule: *schedule,
            spacing: Some(spacing),
            points,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Builds a grid from explicit times (noise end first).
    pub fn from_times(schedule: &NoiseSchedule, times: &[f64]) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidParameter("grid needs at least one step".into()));
        }
        let points = times
            .iter()
            .map(|&t| schedule.eval(t))
            .collect::<Result<Vec<_>>>()?;
        let grid = Self {
            schedule: *schedule,
            spacing: None,
            points,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Same schedule and spacing with a different step count. Grids built
    /// from explicit times fall back to uniform log-SNR spacing.
    pub fn regrid(&self, steps: usize) -> Result<Self> {
        Self::new(
            &self.schedule,
            steps,
            self.spacing.unwrap_or(Spacing::UniformLambda),
        )
    }

    pub fn spacing(&self) -> Option<Spacing> {
        self.spacing
    }

    fn validate(&self) -> Result<()> {
        for (i, w) in self.points.windows(2).enumerate() {
            if w[1].lambda.is_nan() || w[1].lambda <= w[0].lambda {
                return Err(Error::InvalidParameter(format!(
                    "log-SNR not strictly increasing between grid points {i} and {}",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Number of steps `M`.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.points[i].t
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    /// `h_i = lambda(t_i) - lambda(t_{i-1})`, defined for `i >= 1`.
    pub fn h(&self, i: usize) -> f64 {
        self.points[i].lambda - self.points[i - 1].lambda
    }

    /// `r_i = h_{i-1} / h_i`, defined for `i >= 2`.
    pub fn r(&self, i: usize) -> f64 {
        self.h(i - 1) / self.h(i)
    }

    /// Point at fractional index `i - j / J`, interpolated uniformly in log-SNR
    /// between neighbouring coarse points. Integer positions return the
    /// stored coarse point unchanged.
    pub fn fractional_point(&self, i: usize, j: usize, substeps: usize) -> Point {
        assert!(substeps >= 1, "substep count must be positive");
        let back = j / substeps;
        let rem = j % substeps;
        assert!(back <= i, "fractional index before the start of the grid");
        let upper = i - back;
        if rem == 0 {
            return self.points[upper];
        }
        let a = self.points[upper].lambda;
        let b = self.points[upper - 1].lambda;
        let lambda = a + (b - a) * (rem as f64) / (substeps as f64);
        self.schedule.point_at_lambda(lambda)
    }
}
