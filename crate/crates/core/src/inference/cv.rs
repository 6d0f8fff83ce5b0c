//! Blocked cross-validation of the penalty weight.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_poisson_with, FitOptions, Penalty};
use super::glm::{poisson_deviance, poisson_information, validate_data};
use super::lasso::{fit_lasso, lambda_grid, LassoOptions};
use crate::covariates::INTERCEPT_LABEL;
use crate::error::{Error, Result};
use crate::pipeline::ExpandedData;

#[derive(Debug, Clone, PartialEq)]
pub enum CvFamily {
    Quadratic { omega: DMatrix<f64> },
    L1 { penalized: Vec<bool> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambdas: Vec<f64>,
    /// Mean held-out deviance per lambda.
    pub mean_scores: Vec<f64>,
    /// `fold_scores[f][l]`: held-out deviance of fold `f` at `lambdas[l]`.
    pub fold_scores: Vec<Vec<f64>>,
    pub best_lambda: f64,
    pub best_index: usize,
    pub n_folds: usize,
}

/// Fold index per row. Within each `path_id`, the time span of the rows is
/// cut into `folds` equal blocks. Folds without any transition are merged
/// into a neighbouring fold.
pub fn fold_assignment(data: &ExpandedData, folds: usize) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::invalid(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    let mut span: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for (&id, &t) in data.path_ids().iter().zip(data.times()) {
        let e = span.entry(id).or_insert((t, t));
        e.0 = e.0.min(t);
        e.1 = e.1.max(t);
    }
    let mut assignment: Vec<usize> = data
        .path_ids()
        .iter()
        .zip(data.times())
        .map(|(id, &t)| {
            let (lo, hi) = span[id];
            if hi > lo {
                (((t - lo) / (hi - lo) * folds as f64) as usize).min(folds - 1)
            } else {
                0
            }
        })
        .collect();
    let mut labels: Vec<usize> = (0..folds).collect();
    loop {
        let mut events = vec![0.0; labels.len()];
        for (&f, &z) in assignment.iter().zip(data.z()) {
            let k = labels.iter().position(|&l| l == f).expect("known fold");
            events[k] += z;
        }
        let Some(empty) = events.iter().position(|&e| e == 0.0) else {
            break;
        };
        if labels.len() <= 2 {
            return Err(Error::invalid("too few transitions to form two cross-validation folds"));
        }
        let into = if empty + 1 < labels.len() { empty + 1 } else { empty - 1 };
        log::warn!(
            "cross-validation fold {} has no transitions; merged with fold {}",
            labels[empty],
            labels[into]
        );
        let (from, to) = (labels[empty], labels[into]);
        assignment.iter_mut().filter(|f| **f == from).for_each(|f| *f = to);
        labels.remove(empty);
    }
    let dense: BTreeMap<usize, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    Ok(assignment.into_iter().map(|f| dense[&f]).collect())
}

/// Chooses the penalty weight minimizing mean held-out weighted Poisson
/// deviance over blocked folds; ties go to the larger weight.
pub fn cross_validate(data: &ExpandedData, family: &CvFamily, lambdas: &[f64], folds: usize) -> Result<CvResult> {
    validate_data(data)?;
    if lambdas.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let sorted: Vec<f64> = order.iter().map(|&i| lambdas[i]).collect();
    let assignment = fold_assignment(data, folds)?;
    let n_folds = assignment.iter().max().map_or(0, |m| m + 1);
    let fold_scores: Vec<Vec<f64>> = (0..n_folds)
        .into_par_iter()
        .map(|f| {
            let train = data.select_rows(|r| assignment[r] != f);
            let test = data.select_rows(|r| assignment[r] == f);
            let betas = fit_grid(&train, family, &sorted)?;
            let mut scores = vec![0.0; lambdas.len()];
            for (k, beta) in betas.iter().enumerate() {
                scores[order[k]] = poisson_deviance(&test, beta);
            }
            Ok(scores)
        })
        .collect::<Result<_>>()?;
    let mean_scores: Vec<f64> = (0..lambdas.len())
        .map(|l| fold_scores.iter().map(|s| s[l]).sum::<f64>() / n_folds as f64)
        .collect();
    let mut best_index = order[0];
    for &i in &order[1..] {
        if mean_scores[i] < mean_scores[best_index] {
            best_index = i;
        }
    }
    Ok(CvResult {
        lambdas: lambdas.to_vec(),
        mean_scores,
        fold_scores,
        best_lambda: lambdas[best_index],
        best_index,
        n_folds,
    })
}

/// `n` log-spaced quadratic penalty weights, decreasing, spanning
/// `1e2` to `1e-4` times `tr(H) / tr(omega)` with `H` the information at
/// the intercept-only rate.
pub fn quadratic_lambda_grid(data: &ExpandedData, omega: &DMatrix<f64>, n: usize) -> Result<Vec<f64>> {
    validate_data(data)?;
    let trace_omega = omega.trace();
    if !(trace_omega > 0.0) {
        return Err(Error::invalid("penalty matrix has zero trace"));
    }
    let mut beta = vec![0.0; data.n_columns()];
    if let Some(i) = data.labels().iter().position(|l| l == INTERCEPT_LABEL) {
        let events: f64 = data.z().iter().zip(data.weight()).map(|(z, w)| z * w).sum();
        let exposure: f64 = data
            .log_offset()
            .iter()
            .zip(data.weight())
            .map(|(o, w)| w * o.exp())
            .sum();
        if events > 0.0 {
            beta[i] = (events / exposure).ln();
        }
    }
    let scale = poisson_information(data, &beta).trace() / trace_omega;
    Ok(lambda_grid(scale * 1e2, n, 1e-6))
}

/// Coefficients at each weight of a nonincreasing grid, warm-started.
fn fit_grid(train: &ExpandedData, family: &CvFamily, lambdas: &[f64]) -> Result<Vec<Vec<f64>>> {
    match family {
        CvFamily::L1 { penalized } => Ok(fit_lasso(train, lambdas, penalized, &LassoOptions::default())?
            .fits
            .into_iter()
            .map(|f| f.fit.coefficients)
            .collect()),
        CvFamily::Quadratic { omega } => {
            let mut out: Vec<Vec<f64>> = Vec::with_capacity(lambdas.len());
            for &lambda in lambdas {
                let options = FitOptions {
                    start: out.last().cloned(),
                    ..FitOptions::default()
                };
                let penalty = Penalty::Quadratic {
                    lambda,
                    omega: omega.clone(),
                };
                out.push(fit_poisson_with(train, &penalty, &options)?.coefficients);
            }
            Ok(out)
        }
    }
}
