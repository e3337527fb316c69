//! Update rules and the step-size controller shared by the implicit inverters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateKind {
    /// Step along `-A^T r`, with `A` the Jacobian of the forward step.
    GradientDescent,
    /// `z <- z - rho * r`.
    ForwardStep,
}

/// Initial step size per coarse step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    Constant { value: f64 },
    /// `numerator / i` for coarse step `i >= 2`; `first` for the closing step `i = 1`.
    InverseIndex { numerator: f64, first: f64 },
}

impl StepSchedule {
    pub fn initial(&self, coarse_step: usize) -> f64 {
        match *self {
            StepSchedule::Constant { value } => value,
            StepSchedule::InverseIndex { numerator, first } => {
                if coarse_step <= 1 {
                    first
                } else {
                    numerator / coarse_step as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRule {
    pub kind: UpdateKind,
    pub step: StepSchedule,
    /// Halve the step when the best loss has not improved for this many iterations.
    pub halving_window: usize,
    pub min_step: f64,
    /// Linear ramp of the step size from 0 over this many iterations.
    pub warmup_steps: usize,
}

impl UpdateRule {
    /// Gradient descent: rate 0.1, halved after 5 stale iterations, floor 1e-3.
    pub fn gradient_descent() -> Self {
        Self {
            kind: UpdateKind::GradientDescent,
            step: StepSchedule::Constant { value: 0.1 },
            halving_window: 5,
            min_step: 1e-3,
            warmup_steps: 0,
        }
    }

    /// Forward step: rho 0.5, halved after 20 stale iterations, 20-step warmup.
    pub fn forward_step() -> Self {
        Self {
            kind: UpdateKind::ForwardStep,
            step: StepSchedule::Constant { value: 0.5 },
            halving_window: 20,
            min_step: 1e-4,
            warmup_steps: 20,
        }
    }

    pub fn with_step(mut self, value: f64) -> Self {
        self.step = StepSchedule::Constant { value };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.step {
            StepSchedule::Constant { value } => value > 0.0 && value.is_finite(),
            StepSchedule::InverseIndex { numerator, first } => {
                numerator > 0.0 && first > 0.0 && numerator.is_finite() && first.is_finite()
            }
        };
        if !ok || self.min_step.is_nan() || self.min_step <= 0.0 || self.halving_window == 0 {
            return Err(Error::InvalidParameter(format!(
                "invalid update rule {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for UpdateRule {
    fn default() -> Self {
        Self::forward_step()
    }
}

/// Tracks the step size across the iterations of one coarse step.
#[derive(Debug, Clone)]
pub(crate) struct StepController {
    current: f64,
    min: f64,
    window: usize,
    warmup: usize,
    best: f64,
    stale: usize,
    iteration: usize,
}

impl StepController {
    pub(crate) fn new(rule: &UpdateRule, coarse_step: usize) -> Self {
        let initial = rule.step.initial(coarse_step);
        Self {
            current: initial.max(rule.min_step),
            min: rule.min_step,
            window: rule.halving_window,
            warmup: rule.warmup_steps,
            best: f64::INFINITY,
            stale: 0,
            iteration: 0,
        }
    }

    /// Records the loss of the current iterate and returns the step size to use.
    pub(crate) fn next(&mut self, loss: f64) -> f64 {
        let in_warmup = self.iteration < self.warmup;
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
        } else if !in_warmup {
            self.stale += 1;
            if self.stale >= self.window {
                self.current = (self.current * 0.5).max(self.min);
                self.stale = 0;
            }
        }
        let factor = if in_warmup {
            (self.iteration + 1) as f64 / self.warmup as f64
        } else {
            1.0
        };
        self.iteration += 1;
        self.current * factor
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inverse_index_schedule() {
        let s = StepSchedule::InverseIndex {
            numerator: 10.0,
            first: 1.0,
        };
        assert_eq!(s.initial(1), 1.0);
        assert_eq!(s.initial(5), 2.0);
        assert_eq!(s.initial(10), 1.0);
    }

    #[test]
    fn warmup_ramps_linearly() {
        let mut rule = UpdateRule::forward_step();
        rule.warmup_steps = 4;
        let mut c = StepController::new(&rule, 3);
        let steps: Vec<f64> = (0..6).map(|k| c.next(1.0 / (k + 1) as f64)).collect();
        assert_eq!(steps, vec![0.125, 0.25, 0.375, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn halves_after_stale_window_and_respects_floor() {
        let mut rule = UpdateRule::gradient_descent();
        rule.min_step = 0.03;
        let mut c = StepController::new(&rule, 2);
        c.next(1.0);
        let mut seen = vec![];
        for _ in 0..20 {
            seen.push(c.next(2.0));
        }
        assert_eq!(seen[3], 0.1);
        assert_eq!(seen[4], 0.05);
        assert!(seen.iter().all(|&s| s >= 0.03));
        assert_eq!(*seen.last().unwrap(), 0.03);
    }

    proptest! {
        #[test]
        fn step_never_increases_after_warmup(
            losses in proptest::collection::vec(0.0f64..10.0, 1..200),
            warmup in 0usize..10,
        ) {
            let mut rule = UpdateRule::forward_step();
            rule.warmup_steps = warmup;
            rule.halving_window = 3;
            let mut c = StepController::new(&rule, 4);
            let mut last = f64::INFINITY;
            for (k, loss) in losses.into_iter().enumerate() {
                let s = c.next(loss);
                prop_assert!(s >= 0.0);
                if k >= warmup {
                    prop_assert!(s <= last);
                    prop_assert!(s >= rule.min_step);
                    last = s;
                }
            }
        }
    }
}
