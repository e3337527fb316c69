//! Two-dimensional DFT on square row-major fields.
//!
//! The forward transform is unnormalised; the inverse carries the `1 / n^2`
//! factor, so `ifft2(fft2(x)) = x`.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{Error, Result};

pub use rustfft::num_complex::Complex64 as Complex;

/// Side length of a square field with `len` entries, which must be a power of two.
pub fn side_of(len: usize) -> Result<usize> {
    let n = (len as f64).sqrt().round() as usize;
    if n * n != len {
        return Err(Error::InvalidParameter(format!(
            "field of {len} values is not square"
        )));
    }
    check_size(n)?;
    Ok(n)
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    Ok(())
}

fn transform(data: &mut [Complex64], n: usize, plan: Arc<dyn Fft<f64>>) {
    for row in data.chunks_exact_mut(n) {
        plan.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            column[r] = data[r * n + c];
        }
        plan.process(&mut column);
        for r in 0..n {
            data[r * n + c] = column[r];
        }
    }
}

/// Forward transform of a real `n x n` field.
pub fn fft2(field: &[f64], n: usize) -> Result<Vec<Complex64>> {
    let data: Vec<Complex64> = field.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft2_complex(data, n)
}

pub fn fft2_complex(mut data: Vec<Complex64>, n: usize) -> Result<Vec<Complex64>> {
    check_size(n)?;
    if data.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            got: data.len(),
        });
    }
    let plan = FftPlanner::new().plan_fft_forward(n);
    transform(&mut data, n, plan);
    Ok(data)
}

/// Inverse transform, normalised by `1 / n^2`.
pub fn ifft2(mut spectrum: Vec<Complex64>, n: usize) -> Result<Vec<Complex64>> {
    check_size(n)?;
    if spectrum.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            got: spectrum.len(),
        });
    }
    let plan = FftPlanner::new().plan_fft_inverse(n);
    transform(&mut spectrum, n, plan);
    let scale = 1.0 / (n * n) as f64;
    for v in spectrum.iter_mut() {
        *v *= scale;
    }
    Ok(spectrum)
}

/// Signed frequency of index `k` on an `n`-point axis, in `[-n/2, n/2)`.
pub fn signed_frequency(k: usize, n: usize) -> i64 {
    let k = k as i64;
    let n = n as i64;
    if k >= n / 2 {
        k - n
    } else {
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn naive_dft(field: &[f64], n: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for u in 0..n {
            for v in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..n {
                    for c in 0..n {
                        let angle = -2.0 * PI * ((u * r + v * c) as f64) / n as f64;
                        acc += Complex64::from_polar(field[r * n + c], angle);
                    }
                }
                out[u * n + v] = acc;
            }
        }
        out
    }

    fn random_field(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let mut field = vec![0.0; 64];
        field[0] = 1.0;
        let spec = fft2(&field, 8).unwrap();
        assert!(spec.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn cosine_gives_two_conjugate_peaks() {
        let n = 8;
        let field: Vec<f64> = (0..n * n)
            .map(|i| (2.0 * PI * (i / n) as f64 / n as f64).cos())
            .collect();
        let spec = fft2(&field, n).unwrap();
        let half = (n * n) as f64 / 2.0;
        for (k, z) in spec.iter().enumerate() {
            let expected = if k == n || k == (n - 1) * n { half } else { 0.0 };
            assert!((z - Complex64::new(expected, 0.0)).norm() < 1e-12, "{k}: {z}");
        }
    }

    #[test]
    fn matches_naive_dft() {
        let n = 16;
        let field = random_field(3, n);
        let fast = fft2(&field, n).unwrap();
        let slow = naive_dft(&field, n);
        let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn roundtrip_and_parseval() {
        let n = 16;
        let field = random_field(4, n);
        let spec = fft2(&field, n).unwrap();
        let back = ifft2(spec.clone(), n).unwrap();
        let err = field.iter().zip(&back).map(|(a, b)| (b - a).norm()).fold(0.0, f64::max);
        assert!(err <= 1e-12, "{err}");
        let energy: f64 = field.iter().map(|x| x * x).sum();
        let spectral: f64 = spec.iter().map(|z| z.norm_sqr()).sum::<f64>() / (n * n) as f64;
        assert!((energy - spectral).abs() / energy <= 1e-10);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(fft2(&[0.0; 9], 3), Err(Error::NotPowerOfTwo(3))));
        assert!(fft2(&[0.0; 15], 4).is_err());
        assert!(side_of(36).is_err());
        assert!(side_of(48).is_err());
        assert_eq!(side_of(256).unwrap(), 16);
    }

    #[test]
    fn signed_frequencies() {
        let f: Vec<i64> = (0..8).map(|k| signed_frequency(k, 8)).collect();
        assert_eq!(f, vec![0, 1, 2, 3, -4, -3, -2, -1]);
    }

    proptest! {
        #[test]
        fn roundtrip_any_field(seed in 0u64..1000, log_n in 0u32..6) {
            let n = 1usize << log_n;
            let field = random_field(seed, n);
            let back = ifft2(fft2(&field, n).unwrap(), n).unwrap();
            for (a, b) in field.iter().zip(&back) {
                prop_assert!((b.re - a).abs() <= 1e-12 * (1.0 + a.abs()));
                prop_assert!(b.im.abs() <= 1e-12);
            }
        }
    }
}
