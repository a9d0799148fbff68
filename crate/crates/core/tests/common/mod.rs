#![allow(dead_code)]

use fairfactor::dataset::{synthesize_with, SyntheticConfig};
use fairfactor::{DenseMatrix, GroupedPanel, Loading};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

pub fn random_loading(n: usize, r: usize, rng: &mut ChaCha8Rng) -> Loading {
    Loading::project(&gaussian(n, r, rng).view()).unwrap()
}

/// Synthetic panel whose centered values are small enough for rates in (0, 1).
pub fn instance(n: usize, r: usize, sizes: &[usize], scales: &[f64], seed: u64) -> GroupedPanel {
    synthesize_with(&SyntheticConfig::new(n, r, sizes.to_vec(), scales.to_vec(), seed)).unwrap().0
}

/// Central-difference gradient of `f` at `x` with step `h` in every coordinate.
pub fn fd_gradient(f: impl Fn(&DenseMatrix) -> f64, x: &DenseMatrix, h: f64) -> DenseMatrix {
    let mut g = DenseMatrix::zeros(x.dim());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[i, j]];
        probe[[i, j]] = orig + h;
        let up = f(&probe);
        probe[[i, j]] = orig - h;
        let down = f(&probe);
        probe[[i, j]] = orig;
        g[[i, j]] = (up - down) / (2.0 * h);
    }
    g
}

pub fn rel_err(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let diff = (a - b).iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    diff / scale
}

pub fn pairwise(errors: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..errors.len() {
        for j in i + 1..errors.len() {
            s += (errors[i] - errors[j]).powi(2);
        }
    }
    s
}

/// `(1/T) sum_k T_k e_k + lambda * pairwise(e)`.
pub fn penalized(data: &GroupedPanel, errors: &[f64], lambda: f64) -> f64 {
    let rows = data.group_rows();
    let t: usize = rows.iter().sum();
    let fit: f64 = errors.iter().zip(&rows).map(|(e, &tk)| e * tk as f64).sum::<f64>() / t as f64;
    fit + lambda * pairwise(errors)
}

/// Restricted reconstruction errors `tr(Y^T Y)/T_k - tr(L^T Y^T Y L)/(T_k N)`, valid for any `L`.
pub fn restricted_errors(data: &GroupedPanel, l: &DenseMatrix) -> Vec<f64> {
    let n = l.nrows() as f64;
    data.panels()
        .iter()
        .map(|p| {
            let t = p.y.nrows() as f64;
            let yl = p.y.dot(l);
            (p.y.iter().map(|x| x * x).sum::<f64>() - yl.iter().map(|x| x * x).sum::<f64>() / n) / t
        })
        .collect()
}

/// Decision errors of an element-wise map computed entry by entry.
pub fn elementwise_errors(data: &GroupedPanel, l: &DenseMatrix, g: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = l.nrows() as f64;
    data.panels()
        .iter()
        .map(|p| {
            let z = p.y.dot(l).dot(&l.t()) / n;
            let s: f64 = z.iter().zip(p.y.iter()).map(|(a, b)| (g(*a) - g(*b)).powi(2)).sum();
            s / p.y.nrows() as f64
        })
        .collect()
}
