//! Dense linear algebra used by every estimator: a cyclic Jacobi eigensolver for
//! symmetric matrices, a one-sided Jacobi SVD backing the polar (nearest
//! orthonormal) projection, and a Householder least-squares solver.
//!
//! Matrices are plain [`ndarray::Array2<f64>`]; sizes here are small (the
//! mortality panels have at most a few hundred ages), so the O(n^3) sweeps are
//! cheap and, more importantly, fully deterministic.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::LinalgError;

/// Dense row-major matrix carrier.
pub type DenseMatrix = Array2<f64>;

const MAX_SWEEPS: usize = 100;

/// Full spectrum of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Array1<f64>,
    /// Column `j` is the unit eigenvector for `values[j]`.
    pub vectors: DenseMatrix,
}

/// Leading eigenpairs returned by [`top_r_eigs`].
#[derive(Debug, Clone)]
pub struct TopEigs {
    pub values: Array1<f64>,
    pub vectors: DenseMatrix,
    /// Set when the r-th and (r+1)-th eigenvalues coincide within 1e-10, in
    /// which case the returned subspace is one of several valid choices.
    pub degenerate_spectrum: bool,
}

/// Thin singular value decomposition `A = U diag(s) V^T`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    pub singular_values: Array1<f64>,
    pub v: DenseMatrix,
}

pub fn frobenius_norm(a: &ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_finite(a: &ArrayView2<f64>) -> Result<(), LinalgError> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

fn check_symmetric(s: &ArrayView2<f64>) -> Result<(), LinalgError> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(LinalgError::Shape(format!(
            "expected a square matrix, got {}x{}",
            n,
            s.ncols()
        )));
    }
    let scale = s.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut asymmetry = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asymmetry = asymmetry.max((s[[i, j]] - s[[j, i]]).abs());
        }
    }
    if asymmetry > 1e-10 * scale {
        return Err(LinalgError::NotSymmetric { asymmetry });
    }
    Ok(())
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Sweeps visit the pairs `(p, q)` in row-major order, so results are
/// bit-reproducible for a given input.
pub fn symmetric_eigen(s: &ArrayView2<f64>) -> Result<SymmetricEigen, LinalgError> {
    check_finite(s)?;
    check_symmetric(s)?;
    let n = s.nrows();
    // Work on the exactly symmetrized matrix.
    let mut a = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (s[[i, j]] + s[[j, i]]));
    let mut v = Array2::<f64>::eye(n);
    let total = frobenius_norm(&a.view());

    let mut converged = total == 0.0 || n == 1;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if (2.0 * off).sqrt() <= 1e-15 * total {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                // Skip rotations that cannot change the diagonal in floating point.
                if apq.abs() <= f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
                    a[[p, q]] = 0.0;
                    a[[q, p]] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - sn * akq;
                    a[[k, q]] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - sn * aqk;
                    a[[q, k]] = sn * apk + c * aqk;
                }
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - sn * vkq;
                    v[[k, q]] = sn * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence { sweeps });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]).then(i.cmp(&j)));
    let values = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let vectors = v.select(Axis(1), &order);
    Ok(SymmetricEigen { values, vectors })
}

/// Leading `r` eigenpairs of a symmetric matrix, eigenvalues descending.
pub fn top_r_eigs(s: &ArrayView2<f64>, r: usize) -> Result<TopEigs, LinalgError> {
    let n = s.nrows();
    if r == 0 || r > n {
        return Err(LinalgError::RankOutOfRange { requested: r, dim: n });
    }
    let full = symmetric_eigen(s)?;
    let scale = full.values.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let degenerate_spectrum =
        r < n && (full.values[r - 1] - full.values[r]).abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE);
    let idx: Vec<usize> = (0..r).collect();
    Ok(TopEigs {
        values: full.values.select(Axis(0), &idx),
        vectors: full.vectors.select(Axis(1), &idx),
        degenerate_spectrum,
    })
}

/// Thin SVD of a tall matrix by one-sided (Hestenes) Jacobi rotations.
pub fn thin_svd(a: &ArrayView2<f64>) -> Result<ThinSvd, LinalgError> {
    check_finite(a)?;
    let (m, n) = a.dim();
    if m < n {
        return Err(LinalgError::Shape(format!("thin SVD needs rows >= cols, got {m}x{n}")));
    }
    let mut u = a.to_owned();
    let mut v = Array2::<f64>::eye(n);
    let mut sweeps = 0;
    loop {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for k in 0..m {
                    let up = u[[k, p]];
                    let uq = u[[k, q]];
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let up = u[[k, p]];
                    let uq = u[[k, q]];
                    u[[k, p]] = c * up - s * uq;
                    u[[k, q]] = s * up + c * uq;
                }
                for k in 0..n {
                    let vp = v[[k, p]];
                    let vq = v[[k, q]];
                    v[[k, p]] = c * vp - s * vq;
                    v[[k, q]] = s * vp + c * vq;
                }
            }
        }
        sweeps += 1;
        if !rotated {
            break;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(LinalgError::NoConvergence { sweeps });
        }
    }
    let singular_values = Array1::from_iter(u.columns().into_iter().map(|c| c.dot(&c).sqrt()));
    for (j, mut col) in u.columns_mut().into_iter().enumerate() {
        let s = singular_values[j];
        if s > 0.0 {
            col /= s;
        }
    }
    Ok(ThinSvd { u, singular_values, v })
}

/// Closest matrix with orthonormal columns in Frobenius norm (the polar factor).
///
/// Fails with [`LinalgError::RankDeficient`] when the smallest singular value is
/// below `1e-12` times the largest; the projection is undefined there.
pub fn nearest_orthonormal(a: &ArrayView2<f64>) -> Result<DenseMatrix, LinalgError> {
    let (m, n) = a.dim();
    if m < n {
        return Err(LinalgError::RankDeficient { ratio: 0.0 });
    }
    let svd = thin_svd(a)?;
    let smax = svd.singular_values.iter().fold(0.0_f64, |x, &y| x.max(y));
    let smin = svd.singular_values.iter().fold(f64::INFINITY, |x, &y| x.min(y));
    if smax == 0.0 || smin <= 1e-12 * smax {
        let ratio = if smax == 0.0 { 0.0 } else { smin / smax };
        return Err(LinalgError::RankDeficient { ratio });
    }
    Ok(svd.u.dot(&svd.v.t()))
}

/// Largest principal angle (radians) between the column spans of two matrices
/// with orthonormal columns.
///
/// Computed as `asin(||(I - Q1 Q1^T) Q2||_2)`, which stays accurate for tiny
/// angles where the cosine route loses half the digits.
pub fn max_principal_angle(q1: &ArrayView2<f64>, q2: &ArrayView2<f64>) -> Result<f64, LinalgError> {
    if q1.dim() != q2.dim() {
        return Err(LinalgError::Shape(format!("{:?} vs {:?}", q1.dim(), q2.dim())));
    }
    let residual = q2.to_owned() - q1.dot(&q1.t().dot(q2));
    let gram = residual.t().dot(&residual);
    let eig = symmetric_eigen(&gram.view())?;
    let top = eig.values[0].max(0.0).sqrt().min(1.0);
    Ok(top.asin())
}

/// Flip column signs so the first clearly nonzero entry of each column is positive.
pub fn canonicalize_signs(a: &mut DenseMatrix) {
    for mut col in a.columns_mut() {
        let scale = col.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if scale == 0.0 {
            continue;
        }
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-12 * scale) {
            if *first < 0.0 {
                col.mapv_inplace(|x| -x);
            }
        }
    }
}

/// Least-squares solution of `x * beta ~ y` by Householder QR.
pub fn least_squares(x: &ArrayView2<f64>, y: &[f64]) -> Result<Array1<f64>, LinalgError> {
    let (m, p) = x.dim();
    if y.len() != m {
        return Err(LinalgError::Shape(format!("design has {m} rows, response has {}", y.len())));
    }
    if m < p {
        return Err(LinalgError::RankDeficient { ratio: 0.0 });
    }
    let mut r = x.to_owned();
    let mut b = Array1::from(y.to_vec());
    for j in 0..p {
        let norm = (j..m).map(|i| r[[i, j]] * r[[i, j]]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[[j, j]] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..m).map(|i| r[[i, j]]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for col in j..p {
            let dot: f64 = (j..m).map(|i| v[i - j] * r[[i, col]]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in j..m {
                r[[i, col]] -= f * v[i - j];
            }
        }
        let dot: f64 = (j..m).map(|i| v[i - j] * b[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in j..m {
            b[i] -= f * v[i - j];
        }
    }
    let diag_max = (0..p).fold(0.0_f64, |acc, j| acc.max(r[[j, j]].abs()));
    let diag_min = (0..p).fold(f64::INFINITY, |acc, j| acc.min(r[[j, j]].abs()));
    if p > 0 && (diag_max == 0.0 || diag_min <= 1e-12 * diag_max) {
        let ratio = if diag_max == 0.0 { 0.0 } else { diag_min / diag_max };
        return Err(LinalgError::RankDeficient { ratio });
    }
    let mut beta = Array1::<f64>::zeros(p);
    for j in (0..p).rev() {
        let mut acc = b[j];
        for k in (j + 1)..p {
            acc -= r[[j, k]] * beta[k];
        }
        beta[j] = acc / r[[j, j]];
    }
    Ok(beta)
}
