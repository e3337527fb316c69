//! Ring watermarks in the Fourier domain of the initial noise.
//!
//! A key fixes complex values on concentric frequency rings around DC. The
//! embedded noise is a standard Gaussian field whose spectrum is overwritten
//! on the mask; detection measures the mean l1 gap between the spectrum of a
//! recovered noise field and the key on the mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft2, ifft2, signed_frequency, Complex};

/// Outer radii of the rings; ring `k` covers `RING_RADII[k-1] < |f| <= RING_RADII[k]`.
pub const RING_RADII: [f64; 3] = [2.0, 4.0, 6.0];

/// Largest frequency radius a mask may touch.
pub const MAX_RADIUS: f64 = 6.0;

/// Std of the per-ring perturbation applied to a key's base constant.
pub const RING_JITTER: f64 = 0.1;

/// Base constants for the default three-key set.
pub fn default_bases() -> [Complex; 3] {
    [
        Complex::new(1.5, 0.0),
        Complex::new(-1.5, 0.0),
        Complex::new(0.75, 0.75),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub u: usize,
    pub v: usize,
    pub ring: usize,
    /// (re, im)
    pub value: (f64, f64),
}

impl MaskEntry {
    pub fn complex(&self) -> Complex {
        Complex::new(self.value.0, self.value.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkKey {
    pub id: usize,
    pub n: usize,
    pub entries: Vec<MaskEntry>,
}

/// Frequencies on the ring mask as `(u, v, ring)`, DC excluded.
pub fn ring_mask(n: usize) -> Result<Vec<(usize, usize, usize)>> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut out = vec![];
    for u in 0..n {
        for v in 0..n {
            let (a, b) = (signed_frequency(u, n), signed_frequency(v, n));
            let r = ((a * a + b * b) as f64).sqrt();
            if r == 0.0 {
                continue;
            }
            if let Some(ring) = RING_RADII.iter().position(|&outer| r <= outer) {
                // a frequency folded onto itself (a = -a mod n) would force a real value
                if (2 * a).rem_euclid(n as i64) == 0 && (2 * b).rem_euclid(n as i64) == 0 {
                    continue;
                }
                out.push((u, v, ring));
            }
        }
    }
    Ok(out)
}

/// True for the half of the spectrum that carries the free values; the other
/// half holds their conjugates.
fn is_leading(u: usize, v: usize, n: usize) -> bool {
    let (a, b) = (signed_frequency(u, n), signed_frequency(v, n));
    b > 0 || (b == 0 && a > 0)
}

fn mirror(u: usize, v: usize, n: usize) -> (usize, usize) {
    ((n - u) % n, (n - v) % n)
}

impl WatermarkKey {
    /// Key with value `base + N(0, jitter)` per ring (both parts jittered when
    /// the base is complex), mirrored to keep the noise real.
    pub fn generate(id: usize, n: usize, base: Complex, jitter: f64, rng: &mut impl Rng) -> Result<Self> {
        let noise = Normal::new(0.0, jitter)
            .map_err(|e| Error::InvalidParameter(format!("ring jitter: {e}")))?;
        let ring_values: Vec<Complex> = RING_RADII
            .iter()
            .map(|_| {
                let re = base.re + rng.sample(noise);
                let im = if base.im != 0.0 { base.im + rng.sample(noise) } else { 0.0 };
                Complex::new(re, im)
            })
            .collect();
        Self::with_ring_values(id, n, &ring_values)
    }

    /// Key with a fixed value per ring.
    pub fn with_ring_values(id: usize, n: usize, ring_values: &[Complex]) -> Result<Self> {
        if ring_values.len() != RING_RADII.len() {
            return Err(Error::DimensionMismatch {
                expected: RING_RADII.len(),
                got: ring_values.len(),
            });
        }
        let entries = ring_mask(n)?
            .into_iter()
            .map(|(u, v, ring)| {
                let c = ring_values[ring];
                let c = if is_leading(u, v, n) { c } else { c.conj() };
                MaskEntry {
                    u,
                    v,
                    ring,
                    value: (c.re, c.im),
                }
            })
            .collect();
        Ok(Self { id, n, entries })
    }

    /// Default key set: one key per base constant, ids `0..3`.
    pub fn default_set(n: usize, seed: u64) -> Result<Vec<Self>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        default_bases()
            .iter()
            .enumerate()
            .map(|(id, &base)| Self::generate(id, n, base, RING_JITTER, &mut rng))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || !self.n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(self.n));
        }
        let n = self.n;
        let mut lookup = std::collections::HashMap::with_capacity(self.entries.len());
        for e in &self.entries {
            if e.u >= n || e.v >= n {
                return Err(Error::InvalidParameter(format!(
                    "mask entry ({}, {}) outside a {n}x{n} grid",
                    e.u, e.v
                )));
            }
            let (a, b) = (signed_frequency(e.u, n), signed_frequency(e.v, n));
            if ((a * a + b * b) as f64).sqrt() > MAX_RADIUS {
                return Err(Error::InvalidParameter(format!(
                    "mask entry ({}, {}) beyond radius {MAX_RADIUS}",
                    e.u, e.v
                )));
            }
            lookup.insert((e.u, e.v), e.complex());
        }
        for e in &self.entries {
            let partner = lookup.get(&mirror(e.u, e.v, n));
            match partner {
                Some(p) if (p - e.complex().conj()).norm() <= 1e-12 => {}
                _ => return Err(Error::NonHermitian { u: e.u, v: e.v }),
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidParameter(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let key: Self =
            serde_json::from_str(s).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        key.validate()?;
        Ok(key)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkedNoise {
    /// Row-major `n x n` field.
    pub field: Vec<f64>,
    pub key_id: usize,
}

/// Largest imaginary part tolerated after the inverse transform.
const IMAG_TOLERANCE: f64 = 1e-10;

/// Standard Gaussian `n x n` field drawn from `seed`, with its spectrum
/// replaced by the key on the mask.
pub fn embed(key: &WatermarkKey, seed: u64) -> Result<WatermarkedNoise> {
    key.validate()?;
    let n = key.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    embed_into(key, &base)
}

/// Overwrites the mask coefficients of `base` with the key values.
pub fn embed_into(key: &WatermarkKey, base: &[f64]) -> Result<WatermarkedNoise> {
    key.validate()?;
    let n = key.n;
    let mut spectrum = fft2(base, n)?;
    for e in &key.entries {
        spectrum[e.u * n + e.v] = e.complex();
    }
    let back = ifft2(spectrum, n)?;
    let worst = back.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if worst > IMAG_TOLERANCE {
        return Err(Error::InvalidParameter(format!(
            "embedded field has imaginary residue {worst:e}"
        )));
    }
    Ok(WatermarkedNoise {
        field: back.iter().map(|z| z.re).collect(),
        key_id: key.id,
    })
}

/// Mean l1 distance between the spectrum of `field` and the key over the mask.
pub fn detect(key: &WatermarkKey, field: &[f64]) -> Result<f64> {
    let n = key.n;
    if field.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            got: field.len(),
        });
    }
    if key.entries.is_empty() {
        return Err(Error::InvalidParameter("key has an empty mask".into()));
    }
    let spectrum = fft2(field, n)?;
    let total: f64 = key
        .entries
        .iter()
        .map(|e| (spectrum[e.u * n + e.v] - e.complex()).norm())
        .sum();
    Ok(total / key.entries.len() as f64)
}

/// Id of the key at the smallest detection distance; ties go to the lowest id.
pub fn classify(keys: &[WatermarkKey], field: &[f64]) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for key in keys {
        let d = detect(key, field)?;
        best = match best {
            Some((bd, bid)) if bd < d || (bd == d && bid < key.id) => Some((bd, bid)),
            _ => Some((d, key.id)),
        };
    }
    best.map(|(_, id)| id).ok_or(Error::EmptyKeys)
}

/// Midpoint between the mean distances of watermarked and clean fields.
pub fn threshold_midpoint(watermarked: &[f64], clean: &[f64]) -> Result<f64> {
    if watermarked.is_empty() || clean.is_empty() {
        return Err(Error::InvalidParameter("empty calibration sample".into()));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(0.5 * (mean(watermarked) + mean(clean)))
}

/// Detection threshold from `draws` embedded and `draws` unwatermarked fields.
pub fn calibrate_threshold(key: &WatermarkKey, draws: usize, seed: u64) -> Result<f64> {
    let n = key.n;
    let mut marked = Vec::with_capacity(draws);
    let mut clean = Vec::with_capacity(draws);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws {
        let w = embed(key, rng.random())?;
        marked.push(detect(key, &w.field)?);
        let fresh: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
        clean.push(detect(key, &fresh)?);
    }
    threshold_midpoint(&marked, &clean)
}
