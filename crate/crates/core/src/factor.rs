//! Standard factor model estimation and the reconstruction-error quantities the
//! fair objectives are built from.
//!
//! A loading matrix `L` (N x r) is normalized so that `L^T L / N = I_r`; the
//! reconstruction of a block `Y` is `Y L L^T / N` and factors are `F = Y L / N`.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::dataset::GroupedPanel;
use crate::error::{Error, Result};
use crate::linalg::{canonicalize_signs, nearest_orthonormal, top_r_eigs, DenseMatrix};

/// Tolerance of the `L^T L / N = I` check.
pub const LOADING_TOLERANCE: f64 = 1e-8;

/// Loading matrix satisfying `L^T L / N = I_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Loading(DenseMatrix);

impl Loading {
    /// Wraps `matrix`, checking the normalization.
    pub fn new(matrix: DenseMatrix) -> Result<Self> {
        let dev = normalization_defect(&matrix.view());
        if !(dev <= LOADING_TOLERANCE) {
            return Err(Error::InvalidArgument(format!(
                "loading violates L^T L / N = I (max deviation {dev:e})"
            )));
        }
        Ok(Self(matrix))
    }

    /// Scales a matrix with orthonormal columns by `sqrt(N)`.
    pub fn from_orthonormal(q: &ArrayView2<f64>) -> Result<Self> {
        Self::new(q.to_owned() * (q.nrows() as f64).sqrt())
    }

    /// `sqrt(N) * polar(a)`: the closest valid loading to an arbitrary full-rank matrix.
    pub fn project(a: &ArrayView2<f64>) -> Result<Self> {
        let q = nearest_orthonormal(a)?;
        Ok(Self(q * (a.nrows() as f64).sqrt()))
    }

    pub(crate) fn from_trusted(matrix: DenseMatrix) -> Self {
        debug_assert!(normalization_defect(&matrix.view()) <= LOADING_TOLERANCE);
        Self(matrix)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    /// Number of ages N.
    pub fn ages(&self) -> usize {
        self.0.nrows()
    }

    pub fn rank(&self) -> usize {
        self.0.ncols()
    }

    /// `L / sqrt(N)`, which has orthonormal columns.
    pub fn orthonormal(&self) -> DenseMatrix {
        &self.0 / (self.ages() as f64).sqrt()
    }

    /// The projector `L L^T / N`.
    pub fn projector(&self) -> DenseMatrix {
        self.0.dot(&self.0.t()) / self.ages() as f64
    }

    /// `Y L L^T / N` for a `T' x N` block.
    pub fn reconstruct(&self, y: &ArrayView2<f64>) -> DenseMatrix {
        self.factors(y).dot(&self.0.t())
    }

    /// `F = Y L / N`.
    pub fn factors(&self, y: &ArrayView2<f64>) -> DenseMatrix {
        y.dot(&self.0) / self.ages() as f64
    }

    /// Makes the first nonzero entry of each column positive; the projector is unchanged.
    pub fn canonicalize(mut self) -> Self {
        canonicalize_signs(&mut self.0);
        self
    }
}

fn normalization_defect(m: &ArrayView2<f64>) -> f64 {
    let n = m.nrows() as f64;
    let gram = m.t().dot(m) / n;
    let r = gram.nrows();
    let mut dev = 0.0_f64;
    for i in 0..r {
        for j in 0..r {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[[i, j]] - target).abs());
        }
    }
    if m.iter().all(|x| x.is_finite()) {
        dev
    } else {
        f64::INFINITY
    }
}

/// Estimated factor path of one group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorPath {
    pub group: String,
    #[serde(serialize_with = "crate::serialize_rows")]
    pub matrix: DenseMatrix,
}

/// One optimizer iteration, as streamed to convergence logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub unfairness: f64,
    pub step_size: f64,
}

/// Output of any of the estimators.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub loading: Loading,
    pub factors: Vec<FactorPath>,
    /// Objective value after each accepted iterate, starting with the initial point.
    pub objective_trace: Vec<f64>,
    /// Per-group reconstruction errors (factor fits) or decision errors (decision fits).
    pub group_errors: Vec<f64>,
    pub unfairness: f64,
    pub iterations: usize,
    pub converged: bool,
    pub degenerate_spectrum: bool,
    pub diagnostics: Vec<IterationRecord>,
}

fn check_shape(y: &ArrayView2<f64>, loading: &Loading) -> Result<()> {
    if y.ncols() != loading.ages() {
        return Err(Error::Shape(format!(
            "data has {} columns but the loading has {} rows",
            y.ncols(),
            loading.ages()
        )));
    }
    Ok(())
}

/// `(1/T') ||Y - Y L L^T / N||_F^2`.
pub fn reconstruction_error(y: &ArrayView2<f64>, loading: &Loading) -> Result<f64> {
    check_shape(y, loading)?;
    if y.nrows() == 0 {
        return Err(Error::Shape("empty data block".into()));
    }
    Ok(squared_residual(y, loading) / y.nrows() as f64)
}

pub(crate) fn squared_residual(y: &ArrayView2<f64>, loading: &Loading) -> f64 {
    let recon = loading.reconstruct(y);
    y.iter().zip(recon.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Per-group reconstruction errors `L_k`.
pub fn group_errors(data: &GroupedPanel, loading: &Loading) -> Result<Vec<f64>> {
    data.panels().iter().map(|p| reconstruction_error(&p.y.view(), loading)).collect()
}

/// Pairwise squared-gap penalty `sum_{k<k'} (e_k - e_k')^2`.
pub fn pairwise_unfairness(errors: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, a) in errors.iter().enumerate() {
        for b in &errors[i + 1..] {
            total += (a - b) * (a - b);
        }
    }
    total
}

/// Reconstruction-error unfairness of a loading over all groups.
pub fn unfairness(data: &GroupedPanel, loading: &Loading) -> Result<f64> {
    Ok(pairwise_unfairness(&group_errors(data, loading)?))
}

pub(crate) fn factor_paths(data: &GroupedPanel, loading: &Loading) -> Vec<FactorPath> {
    data.panels()
        .iter()
        .map(|p| FactorPath { group: p.group.clone(), matrix: loading.factors(&p.y.view()) })
        .collect()
}

pub(crate) fn check_rank(data: &GroupedPanel, r: usize) -> Result<()> {
    let n = data.ages_len();
    let t = data.total_rows();
    if r == 0 || r > n.min(t) {
        return Err(Error::InvalidArgument(format!("rank {r} must lie in 1..={}", n.min(t))));
    }
    Ok(())
}

/// Top-r eigenvectors of `Y^T Y` as a loading, with the degeneracy flag.
pub(crate) fn pca_loading(data: &GroupedPanel, r: usize) -> Result<(Loading, bool)> {
    check_rank(data, r)?;
    let n = data.ages_len();
    let mut gram = Array2::<f64>::zeros((n, n));
    for p in data.panels() {
        gram += &p.y.t().dot(&p.y);
    }
    let top = top_r_eigs(&gram.view(), r)?;
    let loading = Loading::from_orthonormal(&top.vectors.view())?.canonicalize();
    Ok((loading, top.degenerate_spectrum))
}

/// Standard (unpenalized) factor model: `L / sqrt(N)` are the top-r eigenvectors of `Y^T Y`.
pub fn fit_pca(data: &GroupedPanel, r: usize) -> Result<FitResult> {
    let (loading, degenerate_spectrum) = pca_loading(data, r)?;
    let errors = group_errors(data, &loading)?;
    let total = reconstruction_error(&data.stacked().view(), &loading)?;
    Ok(FitResult {
        factors: factor_paths(data, &loading),
        objective_trace: vec![total],
        unfairness: pairwise_unfairness(&errors),
        group_errors: errors,
        iterations: 0,
        converged: true,
        degenerate_spectrum,
        diagnostics: Vec::new(),
        loading,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthesize;
    use crate::linalg::symmetric_eigen;
    use ndarray::array;

    #[test]
    fn hand_expanded_error() {
        let y = array![[1.0, 0.0], [0.0, 1.0]];
        let l = Loading::new(array![[2.0_f64.sqrt()], [0.0]]).unwrap();
        assert!((reconstruction_error(&y.view(), &l).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn loading_check_rejects_unnormalized() {
        assert!(Loading::new(array![[1.0], [0.0]]).is_err());
        assert!(Loading::new(array![[1.0], [1.0]]).is_ok());
    }

    #[test]
    fn full_rank_has_zero_error() {
        let (data, _) = synthesize(5, 2, &[7, 6], &[0.3, 0.2], 2).unwrap();
        let fit = fit_pca(&data, 5).unwrap();
        assert!(fit.objective_trace[0] < 1e-24);
        assert!(fit.group_errors.iter().all(|e| *e < 1e-24));
    }

    #[test]
    fn noiseless_rank_one_is_exact() {
        let (data, _) = synthesize(9, 1, &[8, 8], &[0.0, 0.0], 3).unwrap();
        let fit = fit_pca(&data, 1).unwrap();
        assert!(fit.objective_trace[0] <= 1e-10);
    }

    #[test]
    fn projector_matches_full_eigensolve() {
        let (data, _) = synthesize(4, 2, &[5, 5], &[0.5, 0.3], 11).unwrap();
        let fit = fit_pca(&data, 2).unwrap();
        let y = data.stacked();
        let eig = symmetric_eigen(&y.t().dot(&y).view()).unwrap();
        let v = eig.vectors.slice(ndarray::s![.., 0..2]).to_owned();
        let oracle = v.dot(&v.t());
        let diff = fit.loading.projector() - oracle;
        assert!(diff.iter().all(|x| x.abs() < 1e-8));
    }

    #[test]
    fn pairwise_penalty_values() {
        assert_eq!(pairwise_unfairness(&[0.5, 0.5]), 0.0);
        assert!((pairwise_unfairness(&[0.3, 0.1]) - 0.04).abs() < 1e-15);
        assert_eq!(pairwise_unfairness(&[1.0, 2.0, 4.0]), 14.0);
    }

    #[test]
    fn group_errors_vanish_for_noiseless_group() {
        let (data, truth) = synthesize(10, 1, &[12, 12], &[0.4, 0.0], 5).unwrap();
        let l = Loading::new(truth.loading.clone()).unwrap();
        let e = group_errors(&data, &l).unwrap();
        assert!(e[1] < 1e-24 && e[0] > 0.0);
    }

    #[test]
    fn rank_out_of_range() {
        let (data, _) = synthesize(4, 1, &[3, 3], &[0.1, 0.1], 0).unwrap();
        assert!(fit_pca(&data, 0).is_err());
        assert!(fit_pca(&data, 5).is_err());
    }

    #[test]
    fn shape_mismatch() {
        let l = Loading::new(array![[1.0], [1.0]]).unwrap();
        let y = array![[1.0, 2.0, 3.0]];
        assert!(matches!(reconstruction_error(&y.view(), &l), Err(Error::Shape(_))));
    }
}
