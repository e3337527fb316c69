//! Reconstruction error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::State;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nmse: f64,
    pub nmae: f64,
    /// mean absolute elementwise error
    pub l1_mean: f64,
}

fn check_dims(x: &State, x_hat: &State) -> Result<()> {
    if x.len() != x_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: x_hat.len(),
        });
    }
    Ok(())
}

/// `||x - x_hat||_2^2 / ||x||_2^2`.
pub fn nmse(x: &State, x_hat: &State) -> Result<f64> {
    check_dims(x, x_hat)?;
    let norm = x.norm_squared();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((x - x_hat).norm_squared() / norm)
}

/// `||x - x_hat||_1 / ||x||_1`.
pub fn nmae(x: &State, x_hat: &State) -> Result<f64> {
    check_dims(x, x_hat)?;
    let norm = x.lp_norm(1);
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((x - x_hat).lp_norm(1) / norm)
}

impl MetricReport {
    pub fn compute(x: &State, x_hat: &State) -> Result<Self> {
        Ok(Self {
            nmse: nmse(x, x_hat)?,
            nmae: nmae(x, x_hat)?,
            l1_mean: (x - x_hat).lp_norm(1) / x.len().max(1) as f64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nmse_identities() {
        let x = State::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(nmse(&x, &x).unwrap(), 0.0);
        assert_eq!(nmse(&x, &State::zeros(3)).unwrap(), 1.0);
        assert!((nmse(&x, &(&x * 2.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(nmse(&State::zeros(3), &x), Err(Error::ZeroNorm)));
    }

    #[test]
    fn nmae_identities() {
        let x = State::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(nmae(&x, &x).unwrap(), 0.0);
        assert!((nmae(&x, &-&x).unwrap() - 2.0).abs() < 1e-15);
        let y = State::from_vec(vec![0.5, -1.0, 4.0]);
        let direct = (0.5 + 1.0 + 1.0) / (1.0 + 2.0 + 3.0);
        assert!((nmae(&x, &y).unwrap() - direct).abs() < 1e-15);
        assert!(nmae(&State::zeros(3), &y).is_err());
        assert!(nmae(&x, &State::zeros(2)).is_err());
    }

    #[test]
    fn report_is_zero_iff_identical() {
        let x = State::from_vec(vec![1.0, 2.0]);
        let r = MetricReport::compute(&x, &x).unwrap();
        assert_eq!((r.nmse, r.nmae, r.l1_mean), (0.0, 0.0, 0.0));
        let r = MetricReport::compute(&x, &State::from_vec(vec![1.0, 2.5])).unwrap();
        assert!(r.nmse > 0.0 && r.nmae > 0.0 && (r.l1_mean - 0.25).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn nmse_is_scale_invariant(
            xs in proptest::collection::vec(-10.0f64..10.0, 1..16),
            noise in proptest::collection::vec(-1.0f64..1.0, 16),
            c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
        ) {
            let x = State::from_vec(xs.clone());
            prop_assume!(x.norm() > 1e-3);
            let y = State::from_fn(xs.len(), |i, _| xs[i] + noise[i]);
            let a = nmse(&x, &y).unwrap();
            let b = nmse(&(&x * c), &(&y * c)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }
    }
}
