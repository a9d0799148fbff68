//! k-fold cross-validation of the fairness penalty.
//!
//! For each fold `j` the model is refit on the remaining rows and scored on the
//! held-out rows by `(1 / sum_k T_kj) sum_k ||g(Y_kj L L^T / N) - g(Y_kj)||^2`
//! and by the largest gap between held-out group decision errors. A penalty is
//! feasible when its mean gap is at most `lambda_c`; the feasible penalty with
//! the smallest CV error is chosen.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::GroupedPanel;
use crate::error::{Error, Result};
use crate::factor::FitResult;
use crate::metrics::fairness_difference;
use crate::optimizer::{fit_fair_decision, fit_fair_factor, OptimizerOptions};
use crate::transform::{decision_errors, DecisionTransform};

pub const DEFAULT_GRID: [f64; 8] = [0.0, 0.5, 1.0, 2.0, 5.0, 11.0, 20.0, 50.0];
pub const DEFAULT_FOLDS: usize = 5;

/// How rows are assigned to folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldMode {
    /// Consecutive blocks of years.
    #[default]
    Contiguous,
    /// Rows shuffled with the optimizer seed before blocking.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvRow {
    pub lambda: f64,
    pub cv_error: f64,
    pub mean_gap: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvTable {
    pub rows: Vec<CvRow>,
    pub lambda_c: f64,
    pub chosen_lambda: f64,
    /// Set when no row was feasible and the smallest-gap row was chosen instead.
    pub fallback: bool,
}

/// Per group, `k` disjoint row lists covering `0..T_k`.
pub fn fold_assignment(group_rows: &[usize], k: usize, mode: FoldMode, seed: u64) -> Result<Vec<Vec<Vec<usize>>>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    group_rows
        .iter()
        .enumerate()
        .map(|(g, &t)| {
            if t < k {
                return Err(Error::InvalidArgument(format!("group {g} has {t} rows, fewer than {k} folds")));
            }
            let mut order: Vec<usize> = (0..t).collect();
            if mode == FoldMode::Random {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(g as u64);
                order.shuffle(&mut rng);
            }
            Ok((0..k).map(|j| order[j * t / k..(j + 1) * t / k].to_vec()).collect())
        })
        .collect()
}

fn fit(data: &GroupedPanel, r: usize, opts: &OptimizerOptions, g: &DecisionTransform) -> Result<FitResult> {
    match g {
        DecisionTransform::Identity => fit_fair_factor(data, r, opts),
        _ => fit_fair_decision(data, r, opts, g),
    }
}

/// Held-out (error, gap) of one fold.
fn score_fold(
    data: &GroupedPanel,
    folds: &[Vec<Vec<usize>>],
    j: usize,
    r: usize,
    opts: &OptimizerOptions,
    g: &DecisionTransform,
) -> Result<(f64, f64)> {
    let held: Vec<Vec<usize>> = folds.iter().map(|f| f[j].clone()).collect();
    let train: Vec<Vec<usize>> = folds
        .iter()
        .map(|f| f.iter().enumerate().filter(|(i, _)| *i != j).flat_map(|(_, rows)| rows.iter().copied()).collect())
        .collect();
    let train_data = data.select_rows(&train)?;
    let test_data = data.select_rows(&held)?;
    let fitted = fit(&train_data, r, opts, g)?;
    let d = decision_errors(&test_data, &fitted.loading, g)?;
    let rows = test_data.group_rows();
    let total: usize = rows.iter().sum();
    let err = d.iter().zip(&rows).map(|(dk, &tk)| dk * tk as f64).sum::<f64>() / total as f64;
    Ok((err, fairness_difference(&d)))
}

fn evaluate_grid(
    data: &GroupedPanel,
    r: usize,
    grid: &[f64],
    folds: &[Vec<Vec<usize>>],
    k: usize,
    g: &DecisionTransform,
    opts: &OptimizerOptions,
) -> Result<Vec<(f64, f64)>> {
    let tasks: Vec<(usize, usize)> = (0..grid.len()).flat_map(|l| (0..k).map(move |j| (l, j))).collect();
    let scores: Vec<Result<(f64, f64)>> = tasks
        .par_iter()
        .map(|&(l, j)| {
            let o = OptimizerOptions { lambda: grid[l], ..opts.clone() };
            score_fold(data, folds, j, r, &o, g)
        })
        .collect();
    let mut sums = vec![(0.0, 0.0); grid.len()];
    for (&(l, _), s) in tasks.iter().zip(scores) {
        let (e, gap) = s?;
        sums[l].0 += e;
        sums[l].1 += gap;
    }
    Ok(sums.into_iter().map(|(e, gap)| (e / k as f64, gap / k as f64)).collect())
}

/// Cross-validates `grid` with `k` folds. When `lambda_c` is `None` the
/// threshold is half the mean gap at `lambda = 0`.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate_lambda(
    data: &GroupedPanel,
    r: usize,
    grid: &[f64],
    k: usize,
    lambda_c: Option<f64>,
    g: &DecisionTransform,
    opts: &OptimizerOptions,
    mode: FoldMode,
) -> Result<CvTable> {
    opts.validate()?;
    if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument("penalty grid must be non-empty, finite and non-negative".into()));
    }
    if lambda_c.is_some_and(|c| c.is_nan() || c < 0.0) {
        return Err(Error::InvalidArgument("feasibility threshold must be non-negative".into()));
    }
    let folds = fold_assignment(&data.group_rows(), k, mode, opts.seed)?;
    let scores = evaluate_grid(data, r, grid, &folds, k, g, opts)?;
    let lambda_c = match lambda_c {
        Some(c) => c,
        None => {
            let base_gap = match grid.iter().position(|l| *l == 0.0) {
                Some(i) => scores[i].1,
                None => evaluate_grid(data, r, &[0.0], &folds, k, g, opts)?[0].1,
            };
            base_gap / 2.0
        }
    };
    let rows: Vec<CvRow> = grid
        .iter()
        .zip(&scores)
        .map(|(&lambda, &(cv_error, mean_gap))| CvRow { lambda, cv_error, mean_gap, feasible: mean_gap <= lambda_c })
        .collect();
    let feasible_best = rows
        .iter()
        .filter(|row| row.feasible)
        .min_by(|a, b| a.cv_error.total_cmp(&b.cv_error));
    let (chosen_lambda, fallback) = match feasible_best {
        Some(row) => (row.lambda, false),
        None => {
            let row = rows.iter().min_by(|a, b| a.mean_gap.total_cmp(&b.mean_gap)).expect("non-empty grid");
            (row.lambda, true)
        }
    };
    Ok(CvTable { rows, lambda_c, chosen_lambda, fallback })
}
