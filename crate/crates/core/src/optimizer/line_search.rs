use serde::{Deserialize, Serialize};

use crate::error::{Error, LinalgError, Result};
use crate::factor::Loading;
use crate::linalg::{frobenius_norm, nearest_orthonormal, DenseMatrix};

/// Step-size rule for the projected gradient iteration.
///
/// Step sizes are expressed relative to `||L||_F / ||G||_F`, so the same
/// settings work regardless of how the data are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum LineSearch {
    /// Evaluates every point of a geometric grid and keeps the best.
    ExactGrid { points: usize, min_ratio: f64, max_ratio: f64 },
    /// Starts at `initial_ratio` and multiplies by `shrink` until the objective decreases.
    Backtracking { initial_ratio: f64, shrink: f64, max_steps: usize },
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch::ExactGrid { points: 25, min_ratio: 1e-6, max_ratio: 1e1 }
    }
}

impl LineSearch {
    pub(crate) fn validate(&self) -> Result<()> {
        let ok = match *self {
            LineSearch::ExactGrid { points, min_ratio, max_ratio } => {
                points >= 1 && min_ratio > 0.0 && max_ratio >= min_ratio && max_ratio.is_finite()
            }
            LineSearch::Backtracking { initial_ratio, shrink, max_steps } => {
                initial_ratio > 0.0 && initial_ratio.is_finite() && shrink > 0.0 && shrink < 1.0 && max_steps >= 1
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid line search settings {self:?}")))
        }
    }
}

/// Accepted step of a line search. `step == 0` means no grid point improved on
/// the current objective and `loading` is the input unchanged.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub step: f64,
    pub loading: Loading,
    pub objective: f64,
}

/// `n` points spaced geometrically from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let ratio = (hi / lo).powf(1.0 / (n - 1) as f64);
    let mut grid: Vec<f64> = (0..n).map(|m| lo * ratio.powi(m as i32)).collect();
    grid[n - 1] = hi;
    grid
}

/// Minimizer of `f` over `grid`, ties resolved toward the earlier point.
pub fn grid_minimize(f: impl Fn(f64) -> f64, grid: &[f64]) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &x in grid {
        let v = f(x);
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((x, v));
        }
    }
    best
}

fn candidate(loading: &Loading, direction: &DenseMatrix, step: f64) -> Result<Loading> {
    let moved = loading.matrix() - &(direction * step);
    let q = nearest_orthonormal(&moved.view())?;
    Ok(Loading::from_trusted(q * (moved.nrows() as f64).sqrt()))
}

/// One step along `-direction` from `loading`, with candidates `sqrt(N) * polar(L - eta G)`.
///
/// `current` is the objective at `loading` and `scale` multiplies the base step
/// `||L||_F / ||G||_F`. Fails with a rank-deficiency error only when every
/// candidate projection is undefined; callers retry with a smaller `scale`.
pub fn line_search(
    objective: impl Fn(&Loading) -> Result<f64>,
    loading: &Loading,
    direction: &DenseMatrix,
    current: f64,
    search: &LineSearch,
    scale: f64,
) -> Result<StepOutcome> {
    let unchanged = || StepOutcome { step: 0.0, loading: loading.clone(), objective: current };
    let g_norm = frobenius_norm(&direction.view());
    if g_norm == 0.0 || !g_norm.is_finite() {
        return Ok(unchanged());
    }
    let base = scale * frobenius_norm(&loading.matrix().view()) / g_norm;
    let mut any_defined = false;
    let mut best: Option<StepOutcome> = None;
    let mut consider = |step: f64| -> Result<Option<f64>> {
        let next = match candidate(loading, direction, step) {
            Ok(l) => l,
            Err(Error::Linalg(LinalgError::RankDeficient { .. })) => return Ok(None),
            Err(e) => return Err(e),
        };
        any_defined = true;
        let value = objective(&next)?;
        if value.is_finite() && value < current && best.as_ref().is_none_or(|b| value < b.objective) {
            best = Some(StepOutcome { step, loading: next, objective: value });
        }
        Ok(Some(value))
    };
    match *search {
        LineSearch::ExactGrid { points, min_ratio, max_ratio } => {
            for step in geometric_grid(min_ratio * base, max_ratio * base, points) {
                consider(step)?;
            }
        }
        LineSearch::Backtracking { initial_ratio, shrink, max_steps } => {
            let mut step = initial_ratio * base;
            for _ in 0..max_steps {
                if let Some(v) = consider(step)? {
                    if v < current {
                        break;
                    }
                }
                step *= shrink;
            }
        }
    }
    match best {
        Some(b) => Ok(b),
        None if any_defined => Ok(unchanged()),
        None => Err(LinalgError::RankDeficient { ratio: 0.0 }.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quadratic_on_grid() {
        let mut grid = geometric_grid(1e-3, 10.0, 25);
        grid.push(0.3);
        let (x, v) = grid_minimize(|e| (e - 0.3) * (e - 0.3), &grid).unwrap();
        assert_eq!(x, 0.3);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn grid_endpoints() {
        let g = geometric_grid(1e-6, 1e1, 25);
        assert_eq!(g.len(), 25);
        assert!((g[0] - 1e-6).abs() < 1e-20);
        assert_eq!(g[24], 10.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn zero_direction_keeps_point() {
        let l = Loading::new(array![[1.0], [1.0]]).unwrap();
        let out = line_search(|_| Ok(1.0), &l, &array![[0.0], [0.0]], 1.0, &LineSearch::default(), 1.0).unwrap();
        assert_eq!(out.step, 0.0);
        assert_eq!(out.loading, l);
    }

    #[test]
    fn no_improvement_returns_zero_step() {
        let l = Loading::new(array![[1.0], [1.0]]).unwrap();
        let out = line_search(|_| Ok(2.0), &l, &array![[1.0], [-1.0]], 1.0, &LineSearch::default(), 1.0).unwrap();
        assert_eq!(out.step, 0.0);
        assert_eq!(out.objective, 1.0);
    }

    #[test]
    fn backtracking_finds_descent() {
        // objective prefers the loading aligned with e1
        let l = Loading::new(array![[1.0], [1.0]]).unwrap();
        let f = |x: &Loading| Ok(-x.matrix()[[0, 0]].abs());
        let search = LineSearch::Backtracking { initial_ratio: 1.0, shrink: 0.5, max_steps: 30 };
        let out = line_search(f, &l, &array![[-1.0], [1.0]], -1.0, &search, 1.0).unwrap();
        assert!(out.step > 0.0 && out.objective < -1.0);
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(LineSearch::ExactGrid { points: 0, min_ratio: 1e-6, max_ratio: 1.0 }.validate().is_err());
        assert!(LineSearch::Backtracking { initial_ratio: 1.0, shrink: 1.5, max_steps: 3 }.validate().is_err());
        assert!(LineSearch::default().validate().is_ok());
    }
}
