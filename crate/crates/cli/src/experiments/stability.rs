use anyhow::Result;
use dpm_inversion::solvers::sample;
use dpm_inversion::{nmse, InversionMethod};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{invert_method, standard_normal};
use crate::config::{ExperimentConfig, MethodSpec};
use crate::output::{json_number, median, to_csv, trial_rng};
use crate::plot;

/// Step sizes tried by the default forward-step method.
pub const DEFAULT_RHO_SWEEP: [f64; 6] = [1.0, 0.5, 0.25, 0.1, 0.05, 0.02];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub omega: f64,
    pub method: String,
    pub trial: usize,
    pub converged: bool,
    pub diverged: bool,
    pub noise_nmse: f64,
    /// Step size that was finally used (empty when not swept).
    pub step: Option<f64>,
    pub iterations: usize,
    /// Residual growth over the first 10 iterations of the first coarse step.
    pub growth10: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCell {
    pub omega: f64,
    pub method: String,
    pub converged_rate: f64,
    pub median_noise_nmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub cells: Vec<StabilityCell>,
    /// Per method: the omegas at which every trial converged.
    pub converged_omegas: Vec<(String, Vec<f64>)>,
}

impl StabilitySummary {
    pub fn converged_set(&self, method: &str) -> Vec<f64> {
        self.converged_omegas
            .iter()
            .find(|(m, _)| m == method)
            .map(|(_, s)| s.clone())
            .unwrap_or_default()
    }

    pub fn largest_converged(&self, method: &str) -> Option<f64> {
        self.converged_set(method).into_iter().reduce(f64::max)
    }
}

pub(crate) fn default_methods() -> Vec<MethodSpec> {
    let fpi = MethodSpec::new(InversionMethod::FixedPoint);
    let mut fs = MethodSpec::new(InversionMethod::BackwardEuler).labelled("forward-step");
    fs.step_sweep = DEFAULT_RHO_SWEEP.to_vec();
    vec![fpi, fs]
}

fn growth10(report: &dpm_inversion::InversionReport) -> f64 {
    match report.steps.first() {
        Some(s) if !s.curve.is_empty() => {
            let k = s.curve.len().min(11) - 1;
            s.curve[k] / s.curve[0]
        }
        _ => f64::NAN,
    }
}

pub(crate) fn run_stability(cfg: &ExperimentConfig) -> Result<(String, serde_json::Value, String)> {
    let omegas = cfg.stability.clone().unwrap_or_default().omegas;
    let methods = if cfg.methods.is_empty() {
        default_methods()
    } else {
        cfg.methods.clone()
    };
    let grid = cfg.build_grid()?;
    let jobs: Vec<(usize, usize)> = (0..omegas.len())
        .flat_map(|w| (0..cfg.trials).map(move |t| (w, t)))
        .collect();
    let per_job = jobs
        .par_iter()
        .map(|&(w, trial)| -> Result<Vec<StabilityRow>> {
            let omega = omegas[w];
            let mut sub = cfg.clone();
            sub.model = cfg.model.with_omega(omega)?;
            let model = sub.build_model()?;
            let mut rng = trial_rng(cfg.seed, trial as u64);
            let x_t = standard_normal(&mut rng, model.dim());
            let x0 = sample(model.as_ref(), &grid, &x_t, cfg.solver)?.last().clone();
            Ok(methods
                .iter()
                .map(|m| {
                    let mut row = StabilityRow {
                        omega,
                        method: m.label(),
                        trial,
                        converged: false,
                        diverged: false,
                        noise_nmse: f64::NAN,
                        step: None,
                        iterations: 0,
                        growth10: f64::NAN,
                        error: String::new(),
                    };
                    match invert_method(model.as_ref(), &grid, &x0, m) {
                        Ok(o) => {
                            row.converged = o.report.all_converged();
                            row.diverged = o.report.any_diverged();
                            row.noise_nmse = nmse(&x_t, &o.report.recovered).unwrap_or(f64::NAN);
                            row.step = o.step;
                            row.iterations = o.report.total_iterations();
                            row.growth10 = growth10(&o.report);
                        }
                        Err(e) => row.error = e.to_string(),
                    }
                    row
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let order = |label: &str| methods.iter().position(|m| m.label() == label);
    let mut rows: Vec<StabilityRow> = per_job.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        a.omega
            .total_cmp(&b.omega)
            .then(order(&a.method).cmp(&order(&b.method)))
            .then(a.trial.cmp(&b.trial))
    });
    let summary = summarize_stability(&rows);
    let series: Vec<(String, Vec<(f64, f64)>)> = summary
        .converged_omegas
        .iter()
        .map(|(m, _)| {
            let pts = summary
                .cells
                .iter()
                .filter(|c| &c.method == m)
                .map(|c| (c.omega, c.converged_rate))
                .collect();
            (m.clone(), pts)
        })
        .collect();
    let svg = plot::line_chart(
        "Inversion convergence under guidance",
        "guidance weight",
        "converged fraction",
        &series,
        false,
        false,
    );
    Ok((to_csv(&rows)?, summary_json(&summary), svg))
}

/// Aggregates per (omega, method), in row order.
pub fn summarize_stability(rows: &[StabilityRow]) -> StabilitySummary {
    let mut keys: Vec<(f64, String)> = vec![];
    for r in rows {
        if !keys.iter().any(|(w, m)| *w == r.omega && *m == r.method) {
            keys.push((r.omega, r.method.clone()));
        }
    }
    let cells: Vec<StabilityCell> = keys
        .iter()
        .map(|(w, m)| {
            let mine: Vec<&StabilityRow> = rows
                .iter()
                .filter(|r| r.omega == *w && &r.method == m)
                .collect();
            let nmses: Vec<f64> = mine.iter().map(|r| r.noise_nmse).collect();
            StabilityCell {
                omega: *w,
                method: m.clone(),
                converged_rate: mine.iter().filter(|r| r.converged).count() as f64
                    / mine.len() as f64,
                median_noise_nmse: median(&nmses),
            }
        })
        .collect();
    let mut methods: Vec<String> = vec![];
    for c in &cells {
        if !methods.contains(&c.method) {
            methods.push(c.method.clone());
        }
    }
    let converged_omegas = methods
        .into_iter()
        .map(|m| {
            let set = cells
                .iter()
                .filter(|c| c.method == m && c.converged_rate == 1.0)
                .map(|c| c.omega)
                .collect();
            (m, set)
        })
        .collect();
    StabilitySummary {
        cells,
        converged_omegas,
    }
}

fn summary_json(s: &StabilitySummary) -> serde_json::Value {
    json!({
        "cells": s.cells.iter().map(|c| json!({
            "omega": c.omega,
            "method": c.method,
            "converged_rate": json_number(c.converged_rate),
            "median_noise_nmse": json_number(c.median_noise_nmse),
        })).collect::<Vec<_>>(),
        "converged_omegas": s.converged_omegas.iter().map(|(m, set)| json!({
            "method": m,
            "omegas": set,
            "largest": s.largest_converged(m),
        })).collect::<Vec<_>>(),
    })
}
