use anyhow::{Context, Result};
use dpm_inversion::latent::decoder_invert;
use dpm_inversion::tensor::Tensor;
use dpm_inversion::{State, ToyDecoder, ToyEncoder};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{DecoderSpec, ExperimentConfig};
use crate::output::{json_number, mean, median, to_csv, trial_rng};
use crate::plot;

/// Input families, in CSV order.
pub const KINDS: [&str; 3] = ["in-range", "clipped", "zero"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderRow {
    pub trial: usize,
    pub kind: String,
    /// `||x - D(E(x))|| / ||x||`.
    pub encode_error: f64,
    /// Same quantity after decoder inversion.
    pub dinv_error: f64,
    /// `||z_hat - z|| / ||z||`, absolute when `z = 0`.
    pub latent_error: f64,
    pub converged: bool,
    /// Decoder inversion strictly beat the encoder.
    pub improved: bool,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSummary {
    pub kind: String,
    pub rows: usize,
    pub converged_rate: f64,
    pub improved_rate: f64,
    pub max_dinv_error: f64,
    pub median_dinv_error: f64,
    pub mean_encode_error: f64,
    pub mean_dinv_error: f64,
}

fn build_decoder(cfg: &ExperimentConfig, spec: &DecoderSpec) -> Result<ToyDecoder> {
    match (&spec.weight_file, &spec.bias_file) {
        (Some(w), Some(b)) => {
            let w = Tensor::load(cfg.base_dir.join(w))
                .with_context(|| format!("decoder weight {}", w.display()))?;
            let b = Tensor::load(cfg.base_dir.join(b))
                .with_context(|| format!("decoder bias {}", b.display()))?;
            Ok(ToyDecoder::from_tensors(&w, &b)?)
        }
        (None, None) => Ok(ToyDecoder::default()),
        _ => anyhow::bail!("decoder.weight_file and decoder.bias_file go together"),
    }
}

fn relative(diff: f64, norm: f64) -> f64 {
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

pub(crate) fn run_decoder(cfg: &ExperimentConfig) -> Result<(String, serde_json::Value, String)> {
    let spec = cfg.decoder.clone().unwrap_or_default();
    let dec = build_decoder(cfg, &spec)?;
    let enc = ToyEncoder::new(&dec)?;
    let adam = spec.adam.build();
    let jobs: Vec<(usize, usize)> = (0..cfg.trials)
        .flat_map(|t| (0..KINDS.len()).map(move |k| (t, k)))
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(trial, kind)| {
            let mut rng = trial_rng(cfg.seed, (trial * KINDS.len() + kind) as u64);
            let mut row = DecoderRow {
                trial,
                kind: KINDS[kind].to_string(),
                encode_error: f64::NAN,
                dinv_error: f64::NAN,
                latent_error: f64::NAN,
                converged: false,
                improved: false,
                error: String::new(),
            };
            let outcome = (|| -> dpm_inversion::Result<_> {
                let z = match kind {
                    0 => dec.sample_in_range(spec.in_range_scale, &mut rng)?,
                    1 => dec.sample_clipped(spec.clipped_limit, &mut rng)?,
                    _ => State::zeros(dec.latent_dim()),
                };
                let x = dec.decode(&z)?;
                let inv = decoder_invert(&dec, &enc, &x, &adam)?;
                Ok((z, inv))
            })();
            match outcome {
                Ok((z, inv)) => {
                    row.encode_error = inv.init_error;
                    row.dinv_error = inv.error;
                    row.latent_error = relative((&inv.latent - &z).norm(), z.norm());
                    row.converged = inv.converged;
                    row.improved = inv.error < inv.init_error;
                }
                Err(e) => row.error = e.to_string(),
            }
            row
        })
        .collect::<Vec<_>>();
    rows.sort_by_key(|r| (KINDS.iter().position(|k| *k == r.kind), r.trial));
    let summaries = summarize_decoder(&rows);
    let mut bars = vec![];
    for s in &summaries {
        bars.push((format!("{} E", s.kind), s.mean_encode_error));
        bars.push((format!("{} D+", s.kind), s.mean_dinv_error));
    }
    let svg = plot::bar_chart("Decoder reconstruction (mean relative error)", "error", &bars, true);
    let summary = json!({
        "kinds": summaries.iter().map(|s| json!({
            "kind": s.kind,
            "rows": s.rows,
            "converged_rate": json_number(s.converged_rate),
            "improved_rate": json_number(s.improved_rate),
            "max_dinv_error": json_number(s.max_dinv_error),
            "median_dinv_error": json_number(s.median_dinv_error),
            "mean_encode_error": json_number(s.mean_encode_error),
            "mean_dinv_error": json_number(s.mean_dinv_error),
        })).collect::<Vec<_>>(),
    });
    Ok((to_csv(&rows)?, summary, svg))
}

/// Aggregates per input kind, in row order.
pub fn summarize_decoder(rows: &[DecoderRow]) -> Vec<DecoderSummary> {
    let mut kinds: Vec<&str> = vec![];
    for r in rows {
        if !kinds.contains(&r.kind.as_str()) {
            kinds.push(&r.kind);
        }
    }
    kinds
        .iter()
        .map(|&kind| {
            let mine: Vec<&DecoderRow> = rows.iter().filter(|r| r.kind == kind).collect();
            let n = mine.len() as f64;
            let dinv: Vec<f64> = mine.iter().map(|r| r.dinv_error).collect();
            let enc: Vec<f64> = mine.iter().map(|r| r.encode_error).collect();
            DecoderSummary {
                kind: kind.to_string(),
                rows: mine.len(),
                converged_rate: mine.iter().filter(|r| r.converged).count() as f64 / n,
                improved_rate: mine.iter().filter(|r| r.improved).count() as f64 / n,
                max_dinv_error: dinv.iter().copied().fold(f64::NAN, f64::max),
                median_dinv_error: median(&dinv),
                mean_encode_error: mean(&enc),
                mean_dinv_error: mean(&dinv),
            }
        })
        .collect()
}
