//! Drift-AR (ARIMA(p, d, 0) with constant) models for factor paths, chosen by AICc,
//! and the mapping from forecast factors to mortality rates and annuity prices.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::error::{Error, ForecastError, Result};
use crate::factor::FitResult;
use crate::linalg::{least_squares, DenseMatrix};
use crate::transform::{clip_rate, epv_row, AgeCurve, DecisionTransform};

/// Relative mean squared residual below which a candidate counts as an exact fit.
const EXACT_FIT: f64 = 1e-24;

/// Candidates need every AR root at least this far from the origin.
pub const MIN_ROOT_MODULUS: f64 = 1.01;

/// Score of one `(p, d)` candidate in the order search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateScore {
    pub order: usize,
    pub differencing: usize,
    /// `None` when the candidate was rank deficient, non-stationary or had too few observations.
    pub aicc: Option<f64>,
    pub exact: bool,
}

/// `w_t = drift + sum_i phi_i w_{t-i} + e_t` on the `d`-times differenced series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftARModel {
    pub order: usize,
    pub differencing: usize,
    pub drift: f64,
    pub ar_coefficients: Vec<f64>,
    pub innovation_variance: f64,
    pub aicc: f64,
    pub candidates: Vec<CandidateScore>,
}

impl DriftARModel {
    /// Long-run mean of the differenced series, `drift / (1 - sum phi)`.
    pub fn mean_increment(&self) -> f64 {
        self.drift / (1.0 - self.ar_coefficients.iter().sum::<f64>())
    }
}

fn difference(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Reflection coefficients of `1 - sum phi_i (rho z)^i` by the step-down recursion;
/// all roots of `1 - sum phi_i z^i` have modulus above `rho` iff every `|k| < 1`.
fn roots_outside(phi: &[f64], rho: f64) -> bool {
    let mut a: Vec<f64> = phi.iter().enumerate().map(|(i, c)| c * rho.powi(i as i32 + 1)).collect();
    while let Some(&k) = a.last() {
        if !(k.abs() < 1.0) {
            return false;
        }
        let m = a.len();
        let denom = 1.0 - k * k;
        a = (0..m - 1).map(|i| (a[i] + k * a[m - 2 - i]) / denom).collect();
    }
    true
}

struct Candidate {
    model_drift: f64,
    phi: Vec<f64>,
    variance: f64,
    aicc: f64,
    exact: bool,
}

/// Fits `w_j = c + sum_i phi_i w_{j-i}` using responses `w_j` for `j >= first`.
fn fit_candidate(w: &[f64], p: usize, first: usize) -> Option<Candidate> {
    debug_assert!(first >= p);
    let n_eff = w.len().checked_sub(first)?;
    let k = p + 2;
    if n_eff < k + 2 {
        return None;
    }
    let x = Array2::from_shape_fn((n_eff, p + 1), |(t, j)| if j == 0 { 1.0 } else { w[first + t - j] });
    let y = &w[first..];
    let beta = least_squares(&x.view(), y).ok()?;
    let phi: Vec<f64> = beta.iter().skip(1).copied().collect();
    if !roots_outside(&phi, MIN_ROOT_MODULUS) {
        return None;
    }
    let fitted = x.dot(&beta);
    let sse: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let tn = n_eff as f64;
    let mean_square = y.iter().map(|v| v * v).sum::<f64>() / tn;
    let floor = EXACT_FIT * (1.0 + mean_square);
    let exact = sse / tn <= floor;
    let variance = (sse / tn).max(floor);
    let kf = k as f64;
    let aicc = tn * variance.ln() + 2.0 * kf + 2.0 * kf * (kf + 1.0) / (tn - kf - 1.0);
    Some(Candidate { model_drift: beta[0], phi, variance, aicc, exact })
}

/// Searches `p <= p_max`, `d <= d_max` (at most 2) and keeps the minimal-AICc
/// candidate whose AR roots all exceed [`MIN_ROOT_MODULUS`] in modulus.
///
/// Every candidate is scored on the same observations (the last
/// `T - p_max - d_max`), so residuals are one-step errors of the same values.
/// Exact fits win outright, the least differenced and lowest order first.
pub fn fit_drift_ar(series: &[f64], p_max: usize, d_max: usize) -> Result<DriftARModel> {
    if d_max > 2 {
        return Err(Error::InvalidArgument(format!("differencing order {d_max} exceeds 2")));
    }
    let need = p_max + d_max + 8;
    if series.len() < need {
        return Err(ForecastError::TooShort { len: series.len(), need }.into());
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("series contains non-finite values".into()));
    }
    let mut scores = Vec::new();
    let mut best: Option<(usize, usize, Candidate)> = None;
    let mut w = series.to_vec();
    for d in 0..=d_max {
        if d > 0 {
            w = difference(&w);
        }
        for p in 0..=p_max {
            let cand = fit_candidate(&w, p, p_max + d_max - d);
            scores.push(CandidateScore {
                order: p,
                differencing: d,
                aicc: cand.as_ref().map(|c| c.aicc),
                exact: cand.as_ref().is_some_and(|c| c.exact),
            });
            let Some(cand) = cand else { continue };
            let better = match &best {
                None => true,
                Some((_, _, b)) => match (cand.exact, b.exact) {
                    (true, false) => true,
                    (false, false) => cand.aicc < b.aicc,
                    _ => false,
                },
            };
            if better {
                best = Some((p, d, cand));
            }
        }
    }
    let (order, differencing, c) = best.ok_or(ForecastError::NoStableCandidate)?;
    Ok(DriftARModel {
        order,
        differencing,
        drift: c.model_drift,
        ar_coefficients: c.phi,
        innovation_variance: c.variance,
        aicc: c.aicc,
        candidates: scores,
    })
}

/// Iterated point forecasts `h` steps past the end of `history`.
pub fn forecast(model: &DriftARModel, history: &[f64], h: usize) -> Result<Vec<f64>> {
    if h < 1 {
        return Err(ForecastError::BadHorizon.into());
    }
    let need = model.order + model.differencing + 1;
    if history.len() < need {
        return Err(ForecastError::TooShort { len: history.len(), need }.into());
    }
    let mut levels = vec![history.to_vec()];
    for _ in 0..model.differencing {
        let next = difference(levels.last().expect("non-empty"));
        levels.push(next);
    }
    let mut w = levels.pop().expect("non-empty");
    let start = w.len();
    for _ in 0..h {
        let t = w.len();
        let next = model.drift + model.ar_coefficients.iter().enumerate().map(|(i, phi)| phi * w[t - 1 - i]).sum::<f64>();
        w.push(next);
    }
    let mut path = w.split_off(start);
    while let Some(level) = levels.pop() {
        let mut last = *level.last().expect("non-empty");
        for v in path.iter_mut() {
            last += *v;
            *v = last;
        }
    }
    Ok(path)
}

/// One drift-AR model per (group, factor column) of a fit.
pub fn fit_factor_models(fit: &FitResult, p_max: usize, d_max: usize) -> Result<Vec<Vec<DriftARModel>>> {
    fit.factors
        .iter()
        .map(|path| {
            path.matrix.columns().into_iter().map(|col| fit_drift_ar(&col.to_vec(), p_max, d_max)).collect()
        })
        .collect()
}

/// Forecast rates per group with the count of entries clipped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalityForecast {
    /// `h x r` forecast factors per group.
    pub factors: Vec<DenseMatrix>,
    /// `h x N` centered log-rate forecasts `L f` per group.
    pub log_rates: Vec<DenseMatrix>,
    /// `h x N` rates `exp(s * L f + a)`, clipped to `[0, 1]`.
    pub rates: Vec<DenseMatrix>,
    pub clipped: usize,
}

/// `m_hat = exp(L f_hat + a)` per group, with each factor column forecast by its own model.
pub fn predict_mortality(
    fit: &FitResult,
    models: &[Vec<DriftARModel>],
    curves: &[AgeCurve],
    h: usize,
) -> Result<MortalityForecast> {
    let k = fit.factors.len();
    if models.len() != k || curves.len() != k {
        return Err(ForecastError::Mismatch(format!(
            "{k} factor paths, {} model sets, {} age curves",
            models.len(),
            curves.len()
        ))
        .into());
    }
    let loading = fit.loading.matrix();
    let n = loading.nrows();
    let mut out = MortalityForecast { factors: Vec::new(), log_rates: Vec::new(), rates: Vec::new(), clipped: 0 };
    for ((path, group_models), curve) in fit.factors.iter().zip(models).zip(curves) {
        if group_models.len() != loading.ncols() {
            return Err(ForecastError::Mismatch(format!(
                "group {} has {} models for rank {}",
                path.group,
                group_models.len(),
                loading.ncols()
            ))
            .into());
        }
        if curve.intercept.len() != n {
            return Err(ForecastError::Mismatch(format!("age curve for {} has wrong length", path.group)).into());
        }
        let mut f = Array2::<f64>::zeros((h, loading.ncols()));
        for (j, model) in group_models.iter().enumerate() {
            let col = forecast(model, &path.matrix.column(j).to_vec(), h)?;
            f.column_mut(j).assign(&Array1::from(col));
        }
        let y = f.dot(&loading.t());
        let mut rates = Array2::<f64>::zeros((h, n));
        for t in 0..h {
            let m = curve.rates(&y.row(t));
            for i in 0..n {
                if !(0.0..=1.0).contains(&m[i]) {
                    out.clipped += 1;
                }
                rates[[t, i]] = clip_rate(m[i]);
            }
        }
        out.factors.push(f);
        out.log_rates.push(y);
        out.rates.push(rates);
    }
    Ok(out)
}

/// Annuity-due prices for every row of every group's rate matrix.
pub fn predict_epv(rates: &[DenseMatrix], g: &DecisionTransform) -> Result<Vec<DenseMatrix>> {
    let DecisionTransform::Annuity(a) = g else {
        return Err(Error::InvalidArgument("pricing needs an annuity transform".into()));
    };
    rates
        .iter()
        .map(|m| {
            let rows = m
                .rows()
                .into_iter()
                .map(|row| epv_row(&row.to_vec(), a.term(), a.discount()))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let width = rows.first().map_or(0, |r| r.len());
            let mut out = Array2::<f64>::zeros((rows.len(), width));
            for (t, r) in rows.iter().enumerate() {
                out.row_mut(t).assign(r);
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(p: Vec<f64>, d: usize, drift: f64) -> DriftARModel {
        DriftARModel {
            order: p.len(),
            differencing: d,
            drift,
            ar_coefficients: p,
            innovation_variance: 1.0,
            aicc: 0.0,
            candidates: Vec::new(),
        }
    }

    #[test]
    fn constant_series() {
        let m = fit_drift_ar(&[3.0; 30], 5, 2).unwrap();
        assert_eq!((m.order, m.differencing), (0, 0));
        assert!((m.drift - 3.0).abs() < 1e-12);
        let f = forecast(&m, &[3.0; 30], 4).unwrap();
        assert!(f.iter().all(|x| (x - 3.0).abs() < 1e-12));
    }

    #[test]
    fn linear_trend() {
        let y: Vec<f64> = (0..40).map(|t| 3.0 + 2.0 * t as f64).collect();
        let m = fit_drift_ar(&y, 5, 2).unwrap();
        let f = forecast(&m, &y, 3).unwrap();
        for (h, v) in f.iter().enumerate() {
            assert!((v - (y[39] + 2.0 * (h + 1) as f64)).abs() < 1e-9);
        }
        assert_eq!(m.differencing, 1);
    }

    #[test]
    fn closed_forms() {
        let rw = model(vec![], 1, 2.0);
        assert_eq!(forecast(&rw, &[4.0, 7.0, 10.0], 3).unwrap(), vec![12.0, 14.0, 16.0]);
        let ar = model(vec![0.5], 0, 0.0);
        assert_eq!(forecast(&ar, &[1.0, 8.0], 3).unwrap(), vec![4.0, 2.0, 1.0]);
        let mean = model(vec![], 0, 1.5);
        assert_eq!(forecast(&mean, &[0.0], 2).unwrap(), vec![1.5, 1.5]);
    }

    #[test]
    fn second_difference_integrates_twice() {
        let m = model(vec![], 2, 1.0);
        // quadratic t^2/2 has constant second difference 1
        let hist: Vec<f64> = (0..5).map(|t| (t * t) as f64 / 2.0).collect();
        let f = forecast(&m, &hist, 2).unwrap();
        assert_eq!(f, vec![12.5, 18.0]);
    }

    #[test]
    fn stationarity_check() {
        assert!(roots_outside(&[], 1.0));
        assert!(roots_outside(&[0.9], 1.0));
        assert!(!roots_outside(&[1.0], 1.0));
        assert!(roots_outside(&[1.5, -0.56], 1.0));
        assert!(!roots_outside(&[0.5, 0.6], 1.0));
        // root at 1/0.995 is stationary but too close to the unit circle
        assert!(roots_outside(&[0.995], 1.0));
        assert!(!roots_outside(&[0.995], MIN_ROOT_MODULUS));
        assert!(roots_outside(&[0.98], MIN_ROOT_MODULUS));
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_drift_ar(&[1.0; 5], 5, 2), Err(Error::Forecast(ForecastError::TooShort { .. }))));
        assert!(matches!(
            forecast(&model(vec![], 0, 0.0), &[1.0], 0),
            Err(Error::Forecast(ForecastError::BadHorizon))
        ));
        assert!(fit_drift_ar(&[1.0; 40], 1, 3).is_err());
    }

    #[test]
    fn mean_increment_of_ar() {
        let m = model(vec![0.5], 1, 1.0);
        assert!((m.mean_increment() - 2.0).abs() < 1e-15);
    }
}
