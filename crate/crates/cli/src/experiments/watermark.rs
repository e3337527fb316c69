use anyhow::{bail, Result};
use dpm_inversion::solvers::sample;
use dpm_inversion::fft::Complex;
use dpm_inversion::watermark::{classify, detect, embed_into};
use dpm_inversion::{State, WatermarkKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::invert_method;
use crate::config::{ExperimentConfig, WatermarkSpec};
use crate::output::{json_number, mean, to_csv, trial_rng};
use crate::plot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkRow {
    pub trial: usize,
    pub key: usize,
    pub method: String,
    pub predicted: Option<usize>,
    pub correct: bool,
    /// On-mask l1 distance to the embedded key.
    pub distance_true: f64,
    /// Smallest distance to any other key.
    pub distance_nearest_other: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkSummary {
    pub method: String,
    pub rows: usize,
    pub accuracy: f64,
    /// `confusion[actual][predicted]`; failed rows are not counted.
    pub confusion: Vec<Vec<usize>>,
    pub mean_distance_true: f64,
}

/// Keys generated from the configured base constants, ids in order.
pub fn build_keys(spec: &WatermarkSpec) -> Result<Vec<WatermarkKey>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.key_seed);
    Ok(spec
        .bases
        .iter()
        .enumerate()
        .map(|(id, b)| {
            WatermarkKey::generate(id, spec.n, Complex::new(b[0], b[1]), spec.jitter, &mut rng)
        })
        .collect::<dpm_inversion::Result<Vec<_>>>()?)
}

pub(crate) fn run_watermark(cfg: &ExperimentConfig) -> Result<(String, serde_json::Value, String)> {
    if cfg.methods.is_empty() {
        bail!("watermark needs at least one [[methods]] entry");
    }
    let spec = cfg.watermark.clone().unwrap_or_default();
    let keys = build_keys(&spec)?;
    let model = cfg.build_model()?;
    let grid = cfg.build_grid()?;
    let n = spec.n;
    let jobs: Vec<(usize, usize)> = (0..cfg.trials)
        .flat_map(|t| (0..keys.len()).map(move |k| (t, k)))
        .collect();
    let per_job = jobs
        .par_iter()
        .map(|&(trial, k)| -> Result<Vec<WatermarkRow>> {
            let mut rng = trial_rng(cfg.seed, (trial * keys.len() + k) as u64);
            let base: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
            let noise = embed_into(&keys[k], &base)?;
            let x_t = State::from_vec(noise.field);
            let x0 = sample(model.as_ref(), &grid, &x_t, cfg.solver)?.last().clone();
            Ok(cfg
                .methods
                .iter()
                .map(|m| {
                    let mut row = WatermarkRow {
                        trial,
                        key: k,
                        method: m.label(),
                        predicted: None,
                        correct: false,
                        distance_true: f64::NAN,
                        distance_nearest_other: f64::NAN,
                        error: String::new(),
                    };
                    let scored = invert_method(model.as_ref(), &grid, &x0, m).and_then(|o| {
                        let field = o.report.recovered.as_slice();
                        let distances = keys
                            .iter()
                            .map(|key| detect(key, field))
                            .collect::<dpm_inversion::Result<Vec<_>>>()?;
                        Ok((classify(&keys, field)?, distances))
                    });
                    match scored {
                        Ok((predicted, d)) => {
                            row.predicted = Some(predicted);
                            row.correct = predicted == keys[k].id;
                            row.distance_true = d[k];
                            row.distance_nearest_other = d
                                .iter()
                                .enumerate()
                                .filter(|&(j, _)| j != k)
                                .map(|(_, &v)| v)
                                .fold(f64::INFINITY, f64::min);
                        }
                        Err(e) => row.error = e.to_string(),
                    }
                    row
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let order = |label: &str| cfg.methods.iter().position(|m| m.label() == label);
    let mut rows: Vec<WatermarkRow> = per_job.into_iter().flatten().collect();
    rows.sort_by_key(|r| (order(&r.method), r.trial, r.key));
    let summaries = summarize_watermark(&rows, keys.len());
    let bars: Vec<(String, f64)> = summaries
        .iter()
        .map(|s| (s.method.clone(), s.accuracy))
        .collect();
    let svg = plot::bar_chart("Watermark classification accuracy", "accuracy", &bars, false);
    let summary = json!({
        "keys": keys.len(),
        "methods": summaries.iter().map(|s| json!({
            "method": s.method,
            "rows": s.rows,
            "accuracy": json_number(s.accuracy),
            "confusion": s.confusion,
            "mean_distance_true": json_number(s.mean_distance_true),
        })).collect::<Vec<_>>(),
    });
    Ok((to_csv(&rows)?, summary, svg))
}

/// Per-method accuracy, confusion matrix and mean true-key distance.
pub fn summarize_watermark(rows: &[WatermarkRow], keys: usize) -> Vec<WatermarkSummary> {
    let mut labels: Vec<&str> = vec![];
    for r in rows {
        if !labels.contains(&r.method.as_str()) {
            labels.push(&r.method);
        }
    }
    labels
        .iter()
        .map(|&label| {
            let mine: Vec<&WatermarkRow> = rows.iter().filter(|r| r.method == label).collect();
            let mut confusion = vec![vec![0usize; keys]; keys];
            for r in &mine {
                if let Some(p) = r.predicted {
                    confusion[r.key][p] += 1;
                }
            }
            let distances: Vec<f64> = mine.iter().map(|r| r.distance_true).collect();
            WatermarkSummary {
                method: label.to_string(),
                rows: mine.len(),
                accuracy: mine.iter().filter(|r| r.correct).count() as f64 / mine.len() as f64,
                confusion,
                mean_distance_true: mean(&distances),
            }
        })
        .collect()
}
