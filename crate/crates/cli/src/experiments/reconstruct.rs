use anyhow::Result;
use dpm_inversion::solvers::sample;
use dpm_inversion::{nmae, nmse, InversionMethod};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{invert_method, standard_normal};
use crate::config::{ExperimentConfig, MethodSpec};
use crate::output::{json_number, mean, median, to_csv, trial_rng};
use crate::plot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructRow {
    pub trial: usize,
    pub method: String,
    pub noise_nmse: f64,
    pub image_nmse: f64,
    pub noise_nmae: f64,
    pub converged: bool,
    pub diverged: bool,
    pub iterations: usize,
    pub max_residual: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub rows: usize,
    pub failed: usize,
    pub converged_rate: f64,
    pub median_noise_nmse: f64,
    pub mean_noise_nmse: f64,
    pub median_image_nmse: f64,
    pub mean_image_nmse: f64,
}

fn trial_rows(
    cfg: &ExperimentConfig,
    model: &dyn dpm_inversion::DataPredictionModel,
    grid: &dpm_inversion::TimeGrid,
    methods: &[MethodSpec],
    trial: usize,
) -> Result<Vec<ReconstructRow>> {
    let mut rng = trial_rng(cfg.seed, trial as u64);
    let x_t = standard_normal(&mut rng, model.dim());
    let x0 = sample(model, grid, &x_t, cfg.solver)?.last().clone();
    let mut rows = Vec::with_capacity(methods.len());
    for m in methods {
        let mut row = ReconstructRow {
            trial,
            method: m.label(),
            noise_nmse: f64::NAN,
            image_nmse: f64::NAN,
            noise_nmae: f64::NAN,
            converged: false,
            diverged: false,
            iterations: 0,
            max_residual: f64::NAN,
            error: String::new(),
        };
        let outcome = invert_method(model, grid, &x0, m).and_then(|o| {
            let x0_hat = sample(model, grid, &o.report.recovered, cfg.solver)?;
            Ok((o, x0_hat.last().clone()))
        });
        match outcome {
            Ok((o, x0_hat)) => {
                row.noise_nmse = nmse(&x_t, &o.report.recovered)?;
                row.noise_nmae = nmae(&x_t, &o.report.recovered)?;
                row.image_nmse = nmse(&x0, &x0_hat).unwrap_or(f64::NAN);
                row.converged = o.report.all_converged();
                row.diverged = o.report.any_diverged();
                row.iterations = o.report.total_iterations();
                row.max_residual = o.report.max_residual();
            }
            Err(e) => row.error = e.to_string(),
        }
        rows.push(row);
    }
    Ok(rows)
}

pub(crate) fn collect_rows(cfg: &ExperimentConfig, methods: &[MethodSpec]) -> Result<Vec<ReconstructRow>> {
    let model = cfg.build_model()?;
    let grid = cfg.build_grid()?;
    let per_trial = (0..cfg.trials)
        .into_par_iter()
        .map(|t| trial_rows(cfg, model.as_ref(), &grid, methods, t))
        .collect::<Result<Vec<_>>>()?;
    let order = |label: &str| methods.iter().position(|m| m.label() == label);
    let mut rows: Vec<ReconstructRow> = per_trial.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.trial, order(&r.method)));
    Ok(rows)
}

/// Per-method aggregates, in order of first appearance.
pub fn summarize_reconstruct(rows: &[ReconstructRow]) -> Vec<MethodSummary> {
    let mut labels: Vec<&str> = vec![];
    for r in rows {
        if !labels.contains(&r.method.as_str()) {
            labels.push(&r.method);
        }
    }
    labels
        .iter()
        .map(|&label| {
            let mine: Vec<&ReconstructRow> = rows.iter().filter(|r| r.method == label).collect();
            let noise: Vec<f64> = mine.iter().map(|r| r.noise_nmse).collect();
            let image: Vec<f64> = mine.iter().map(|r| r.image_nmse).collect();
            MethodSummary {
                method: label.to_string(),
                rows: mine.len(),
                failed: mine.iter().filter(|r| !r.error.is_empty()).count(),
                converged_rate: mine.iter().filter(|r| r.converged).count() as f64
                    / mine.len() as f64,
                median_noise_nmse: median(&noise),
                mean_noise_nmse: mean(&noise),
                median_image_nmse: median(&image),
                mean_image_nmse: mean(&image),
            }
        })
        .collect()
}

fn summary_json(summaries: &[MethodSummary]) -> serde_json::Value {
    let mut ranked: Vec<&MethodSummary> = summaries.iter().collect();
    ranked.sort_by(|a, b| a.median_noise_nmse.total_cmp(&b.median_noise_nmse));
    json!({
        "methods": summaries.iter().map(|s| json!({
            "method": s.method,
            "rows": s.rows,
            "failed": s.failed,
            "converged_rate": json_number(s.converged_rate),
            "median_noise_nmse": json_number(s.median_noise_nmse),
            "mean_noise_nmse": json_number(s.mean_noise_nmse),
            "median_image_nmse": json_number(s.median_image_nmse),
            "mean_image_nmse": json_number(s.mean_image_nmse),
        })).collect::<Vec<_>>(),
        "ranking_by_median_noise_nmse": ranked.iter().map(|s| s.method.clone()).collect::<Vec<_>>(),
    })
}

pub(crate) fn run_reconstruct(cfg: &ExperimentConfig) -> Result<(String, serde_json::Value, String)> {
    let rows = collect_rows(cfg, &cfg.methods)?;
    let summaries = summarize_reconstruct(&rows);
    let bars: Vec<(String, f64)> = summaries
        .iter()
        .map(|s| (s.method.clone(), s.median_noise_nmse))
        .collect();
    let svg = plot::bar_chart("Noise reconstruction (median NMSE)", "NMSE", &bars, true);
    Ok((to_csv(&rows)?, summary_json(&summaries), svg))
}

pub(crate) fn sweep_methods(cfg: &ExperimentConfig) -> (Vec<usize>, Vec<MethodSpec>) {
    let steps = cfg.sweep.clone().unwrap_or_default().steps;
    let mut methods: Vec<MethodSpec> = steps
        .iter()
        .map(|&s| MethodSpec::new(InversionMethod::Naive { steps: s }))
        .collect();
    methods.extend(cfg.methods.iter().cloned());
    (steps, methods)
}

pub(crate) fn run_sweep_naive(cfg: &ExperimentConfig) -> Result<(String, serde_json::Value, String)> {
    let (steps, methods) = sweep_methods(cfg);
    let rows = collect_rows(cfg, &methods)?;
    let summaries = summarize_reconstruct(&rows);
    let naive: Vec<(f64, f64)> = steps
        .iter()
        .zip(&summaries)
        .map(|(&s, m)| (s as f64, m.median_noise_nmse))
        .collect();
    // relative improvement between the two finest sweep points
    let saturation = match naive.len() {
        n if n >= 2 => {
            let (a, b) = (naive[n - 2].1, naive[n - 1].1);
            (a - b) / a
        }
        _ => f64::NAN,
    };
    let mut series = vec![("naive".to_string(), naive.clone())];
    for s in &summaries[steps.len()..] {
        let flat = naive.iter().map(|&(x, _)| (x, s.median_noise_nmse)).collect();
        series.push((s.method.clone(), flat));
    }
    let svg = plot::line_chart(
        "Naive inversion sweep (median noise NMSE)",
        "naive steps",
        "NMSE",
        &series,
        true,
        true,
    );
    let mut summary = summary_json(&summaries);
    summary["sweep_steps"] = json!(steps);
    summary["naive_last_relative_improvement"] = json_number(saturation);
    Ok((to_csv(&rows)?, summary, svg))
}
