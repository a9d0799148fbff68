//! Accuracy and fairness statistics of predictions against realized values.
//!
//! For group `k` with `T_k x N` errors `e`:
//!
//! * `RMSE_k = sqrt(sum e^2 / (T_k N))`
//! * by age `i`: `sqrt(sum_t e_ti^2 / T_k)`; by year `t`: `sqrt(sum_i e_ti^2 / N)`
//! * total: `sqrt(sum_k T_k RMSE_k^2 / T)`
//! * fairness difference: `|RMSE_1 - RMSE_2|`, the largest pairwise gap for more groups.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// What the compared matrices hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Mortality,
    Epv,
}

impl std::fmt::Display for Quantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Quantity::Mortality => "mortality",
            Quantity::Epv => "epv",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub quantity: Quantity,
    pub rows: Vec<usize>,
    pub rmse_by_group: Vec<f64>,
    pub rmse_total: f64,
    pub fairness_difference: f64,
    /// `K x N`.
    pub rmse_by_age: Vec<Vec<f64>>,
    /// `K x T_k`.
    pub rmse_by_year: Vec<Vec<f64>>,
}

impl MetricsReport {
    /// `|T * total^2 - sum_k T_k * RMSE_k^2|` relative to its right-hand side.
    pub fn aggregation_defect(&self) -> f64 {
        let t: usize = self.rows.iter().sum();
        let lhs = t as f64 * self.rmse_total * self.rmse_total;
        let rhs: f64 = self.rows.iter().zip(&self.rmse_by_group).map(|(&tk, r)| tk as f64 * r * r).sum();
        if rhs == 0.0 {
            lhs.abs()
        } else {
            (lhs - rhs).abs() / rhs
        }
    }
}

/// Largest pairwise gap between group values (`|a - b|` for two groups).
pub fn fairness_difference(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

pub fn metrics(actual: &[DenseMatrix], predicted: &[DenseMatrix], quantity: Quantity) -> Result<MetricsReport> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(Error::Shape(format!("{} actual groups vs {} predicted", actual.len(), predicted.len())));
    }
    let n = actual[0].ncols();
    let mut report = MetricsReport {
        quantity,
        rows: Vec::new(),
        rmse_by_group: Vec::new(),
        rmse_total: 0.0,
        fairness_difference: 0.0,
        rmse_by_age: Vec::new(),
        rmse_by_year: Vec::new(),
    };
    let mut weighted = 0.0;
    for (k, (a, p)) in actual.iter().zip(predicted).enumerate() {
        if a.dim() != p.dim() || a.ncols() != n || a.nrows() == 0 || n == 0 {
            return Err(Error::Shape(format!(
                "group {k}: actual {:?} vs predicted {:?} (expected {n} columns)",
                a.dim(),
                p.dim()
            )));
        }
        let e = a - p;
        let sq = e.mapv(|x| x * x);
        let (t_k, _) = sq.dim();
        let group_mse = sq.sum() / (t_k * n) as f64;
        report.rows.push(t_k);
        report.rmse_by_group.push(group_mse.sqrt());
        report.rmse_by_age.push(sq.columns().into_iter().map(|c| (c.sum() / t_k as f64).sqrt()).collect());
        report.rmse_by_year.push(sq.rows().into_iter().map(|r| (r.sum() / n as f64).sqrt()).collect());
        weighted += t_k as f64 * group_mse;
    }
    let t: usize = report.rows.iter().sum();
    report.rmse_total = (weighted / t as f64).sqrt();
    report.fairness_difference = fairness_difference(&report.rmse_by_group);
    Ok(report)
}
