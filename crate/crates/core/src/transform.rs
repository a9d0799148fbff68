//! Decision transforms `g` applied to reconstructions and observations: the
//! identity, element-wise maps, and the expected present value of a term
//! annuity-due priced off the mortality rates a row of log rates implies.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{GroupedPanel, Panel};
use crate::error::{Error, Result, TransformError};
use crate::factor::Loading;
use crate::linalg::DenseMatrix;

/// Smooth scalar maps applied entry by entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementwiseMap {
    Exp,
    Tanh,
}

impl ElementwiseMap {
    pub fn value(self, x: f64) -> f64 {
        match self {
            ElementwiseMap::Exp => x.exp(),
            ElementwiseMap::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ElementwiseMap::Exp => x.exp(),
            ElementwiseMap::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Which annuity objective the decision optimizer minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linearization {
    /// First-order expansion with weights frozen at the observed rates.
    #[default]
    Taylor,
    /// Exact EPV differences, differentiated through the weights at the reconstruction.
    Exact,
}

/// Maps a centered row back to rates: `m = exp(scale * y + intercept)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeCurve {
    pub intercept: Array1<f64>,
    pub scale: Array1<f64>,
}

impl AgeCurve {
    pub fn centered(intercept: Array1<f64>) -> Self {
        let scale = Array1::ones(intercept.len());
        Self { intercept, scale }
    }

    /// The curve a panel was centered (and possibly scaled) with.
    pub fn of_panel(panel: &Panel) -> Self {
        Self { intercept: panel.intercept.clone(), scale: panel.scale_or_ones() }
    }

    pub fn rates(&self, y: &ArrayView1<f64>) -> Array1<f64> {
        Array1::from_shape_fn(y.len(), |i| (self.scale[i] * y[i] + self.intercept[i]).exp())
    }
}

/// Term annuity-due with `term` yearly payments of 1 and per-year discount factor `discount`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnuityTransform {
    term: usize,
    discount: f64,
    curves: Vec<(String, AgeCurve)>,
    pub linearization: Linearization,
}

impl AnnuityTransform {
    pub fn new(term: usize, discount: f64, curves: Vec<(String, AgeCurve)>) -> Result<Self> {
        if term == 0 {
            return Err(TransformError::TermOutOfRange { term, ages: 0 }.into());
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(TransformError::BadDiscount(discount).into());
        }
        for (group, c) in &curves {
            if c.scale.len() != c.intercept.len() {
                return Err(TransformError::InterceptLength {
                    group: group.clone(),
                    got: c.scale.len(),
                    expected: c.intercept.len(),
                }
                .into());
            }
            if term > c.intercept.len() + 1 {
                return Err(TransformError::TermOutOfRange { term, ages: c.intercept.len() }.into());
            }
        }
        Ok(Self { term, discount, curves, linearization: Linearization::default() })
    }

    /// Uses each panel's stored intercept (and scale) as its group's age curve.
    pub fn from_panels(data: &GroupedPanel, term: usize, discount: f64) -> Result<Self> {
        let curves = data
            .panels()
            .iter()
            .map(|p| (p.group.clone(), AgeCurve::of_panel(p)))
            .collect();
        Self::new(term, discount, curves)
    }

    pub fn with_linearization(mut self, linearization: Linearization) -> Self {
        self.linearization = linearization;
        self
    }

    pub fn term(&self) -> usize {
        self.term
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn curve(&self, group: &str) -> Result<&AgeCurve> {
        self.curves
            .iter()
            .find(|(g, _)| g == group)
            .map(|(_, c)| c)
            .ok_or_else(|| TransformError::UnknownGroup(group.to_string()).into())
    }

    pub(crate) fn checked_curve(&self, group: &str, ages: usize) -> Result<&AgeCurve> {
        let c = self.curve(group)?;
        if c.intercept.len() != ages {
            return Err(TransformError::InterceptLength {
                group: group.to_string(),
                got: c.intercept.len(),
                expected: ages,
            }
            .into());
        }
        if self.term > ages + 1 {
            return Err(TransformError::TermOutOfRange { term: self.term, ages }.into());
        }
        Ok(c)
    }
}

/// The decision map `g`.
#[derive(Debug, Clone, PartialEq)]
pub enum DecisionTransform {
    Identity,
    Elementwise(ElementwiseMap),
    Annuity(AnnuityTransform),
}

/// Number of EPV columns for `ages` ages and an `term`-year annuity: `N - n + 2`,
/// capped at `N` (a one-payment annuity needs no survival and prices every age).
pub fn annuity_width(ages: usize, term: usize) -> usize {
    (ages + 2).saturating_sub(term.max(2))
}

fn validate_annuity(ages: usize, term: usize, discount: f64) -> Result<(), TransformError> {
    if term == 0 || term > ages + 1 || ages == 0 {
        return Err(TransformError::TermOutOfRange { term, ages });
    }
    if !(discount > 0.0 && discount <= 1.0) {
        return Err(TransformError::BadDiscount(discount));
    }
    Ok(())
}

/// Clamps a rate to `[0, 1]`.
pub fn clip_rate(m: f64) -> f64 {
    m.clamp(0.0, 1.0)
}

/// Number of rates outside `[0, 1]` that pricing would clip.
pub fn count_out_of_range(rates: &[f64]) -> usize {
    rates.iter().filter(|m| !(0.0..=1.0).contains(*m)).count()
}

/// EPV `sum_{s<n} v^s prod_{k<s} (1 - m_{start+k})` of an annuity-due bought at
/// age index `start` (0-based). Rates outside `[0, 1]` are clipped.
pub fn epv_annuity(rates: &[f64], start: usize, term: usize, discount: f64) -> Result<f64, TransformError> {
    let n_ages = rates.len();
    validate_annuity(n_ages, term, discount)?;
    let width = annuity_width(n_ages, term);
    if start >= width {
        return Err(TransformError::StartOutOfRange { start, max: width - 1 });
    }
    let mut value = 1.0;
    let mut survival = 1.0;
    let mut vs = 1.0;
    for s in 1..term {
        survival *= 1.0 - clip_rate(rates[start + s - 1]);
        vs *= discount;
        value += vs * survival;
    }
    Ok(value)
}

/// EPVs for every admissible starting age.
pub fn epv_row(rates: &[f64], term: usize, discount: f64) -> Result<Array1<f64>, TransformError> {
    let width = {
        validate_annuity(rates.len(), term, discount)?;
        annuity_width(rates.len(), term)
    };
    (0..width).map(|i| epv_annuity(rates, i, term, discount)).collect()
}

/// Jacobian of [`epv_row`] stored as a band: entry `(i, j)` is `d p_i / d m_{i+j}`
/// for `j < n - 1`; every other partial derivative is zero.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EpvBand {
    width: usize,
    band: usize,
    ages: usize,
    data: Vec<f64>,
}

impl EpvBand {
    pub(crate) fn new(rates: &[f64], term: usize, discount: f64) -> Result<Self, TransformError> {
        let ages = rates.len();
        validate_annuity(ages, term, discount)?;
        let width = annuity_width(ages, term);
        let band = term - 1;
        let mut data = vec![0.0; width * band];
        let mut q = vec![0.0; band];
        let mut powers = vec![1.0; term];
        for s in 1..term {
            powers[s] = powers[s - 1] * discount;
        }
        for i in 0..width {
            for (k, qk) in q.iter_mut().enumerate() {
                *qk = 1.0 - clip_rate(rates[i + k]);
            }
            // d/dm_{i+j} of sum_s v^s prod_{k<s} q_k = -sum_{s>j} v^s prod_{k<s, k!=j} q_k
            let mut prefix = 1.0;
            for j in 0..band {
                let mut inner = 1.0;
                let mut acc = 0.0;
                for s in (j + 1)..term {
                    if s - 1 > j {
                        inner *= q[s - 1];
                    }
                    acc += powers[s] * inner;
                }
                data[i * band + j] = -prefix * acc;
                prefix *= q[j];
            }
        }
        Ok(Self { width, band, ages, data })
    }

    pub(crate) fn width(&self) -> usize {
        self.width
    }

    /// `out = W d`.
    pub(crate) fn mul(&self, d: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.width) {
            let row = &self.data[i * self.band..(i + 1) * self.band];
            *o = row.iter().zip(&d[i..i + self.band]).map(|(w, x)| w * x).sum();
        }
    }

    /// `out = W^T e`.
    pub(crate) fn tmul(&self, e: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, ei) in e.iter().enumerate().take(self.width) {
            let row = &self.data[i * self.band..(i + 1) * self.band];
            for (j, w) in row.iter().enumerate() {
                out[i + j] += w * ei;
            }
        }
    }

    pub(crate) fn to_dense(&self) -> DenseMatrix {
        let mut w = Array2::<f64>::zeros((self.width, self.ages));
        for i in 0..self.width {
            for j in 0..self.band {
                w[[i, i + j]] = self.data[i * self.band + j];
            }
        }
        w
    }
}

/// Jacobian of [`epv_row`] with respect to the rates: a `(N - n + 2) x N` band
/// matrix whose row `i` is nonzero only in columns `i..=i+n-2`.
pub fn epv_weights(rates: &[f64], term: usize, discount: f64) -> Result<DenseMatrix, TransformError> {
    Ok(EpvBand::new(rates, term, discount)?.to_dense())
}

/// Applies `g` to each row of a block belonging to `group`.
pub fn apply_transform(g: &DecisionTransform, group: &str, y_block: &ArrayView2<f64>) -> Result<DenseMatrix> {
    match g {
        DecisionTransform::Identity => Ok(y_block.to_owned()),
        DecisionTransform::Elementwise(map) => Ok(y_block.mapv(|x| map.value(x))),
        DecisionTransform::Annuity(a) => {
            let n = y_block.ncols();
            let curve = a.checked_curve(group, n)?;
            let width = annuity_width(n, a.term);
            let mut out = Array2::<f64>::zeros((y_block.nrows(), width));
            for (t, row) in y_block.rows().into_iter().enumerate() {
                let rates = curve.rates(&row);
                let p = epv_row(rates.as_slice().expect("contiguous"), a.term, a.discount)?;
                out.row_mut(t).assign(&p);
            }
            Ok(out)
        }
    }
}

/// Rates of a block that the annuity transform would clip (0 for other transforms).
pub fn clipped_rates(g: &DecisionTransform, group: &str, y_block: &ArrayView2<f64>) -> Result<usize> {
    match g {
        DecisionTransform::Annuity(a) => {
            let curve = a.checked_curve(group, y_block.ncols())?;
            Ok(y_block
                .rows()
                .into_iter()
                .map(|row| count_out_of_range(curve.rates(&row).as_slice().expect("contiguous")))
                .sum())
        }
        _ => Ok(0),
    }
}

/// Per-group decision errors `D_k = (1/T_k) ||g(Y_k L L^T / N) - g(Y_k)||_F^2`.
pub fn decision_errors(data: &GroupedPanel, loading: &Loading, g: &DecisionTransform) -> Result<Vec<f64>> {
    if loading.ages() != data.ages_len() {
        return Err(Error::Shape(format!(
            "loading has {} rows for {} ages",
            loading.ages(),
            data.ages_len()
        )));
    }
    data.panels()
        .iter()
        .map(|p| {
            let y = p.y.view();
            let recon = loading.reconstruct(&y);
            let a = apply_transform(g, &p.group, &recon.view())?;
            let b = apply_transform(g, &p.group, &y)?;
            let sq: f64 = a.iter().zip(b.iter()).map(|(x, z)| (x - z) * (x - z)).sum();
            Ok(sq / p.rows() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize, Panel};
    use crate::factor::group_errors;

    #[test]
    fn single_payment_is_certain() {
        let m = [0.3, 0.9, 0.1];
        for v in [0.5, 1.0] {
            for i in 0..3 {
                assert_eq!(epv_annuity(&m, i, 1, v).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn no_mortality_no_discount() {
        let m = [0.0; 12];
        assert_eq!(epv_annuity(&m, 0, 10, 1.0).unwrap(), 10.0);
    }

    #[test]
    fn geometric_survival() {
        let m = [0.5; 4];
        assert!((epv_annuity(&m, 0, 3, 1.0).unwrap() - 1.75).abs() < 1e-15);
    }

    #[test]
    fn range_errors() {
        let m = [0.1; 5];
        assert!(matches!(epv_annuity(&m, 0, 7, 1.0), Err(TransformError::TermOutOfRange { .. })));
        // width = 5 - 3 + 2 = 4
        assert!(epv_annuity(&m, 3, 3, 1.0).is_ok());
        assert!(matches!(epv_annuity(&m, 4, 3, 1.0), Err(TransformError::StartOutOfRange { .. })));
        assert!(matches!(epv_annuity(&m, 0, 3, 1.5), Err(TransformError::BadDiscount(_))));
        assert!(matches!(epv_annuity(&m, 0, 0, 1.0), Err(TransformError::TermOutOfRange { .. })));
    }

    #[test]
    fn out_of_range_rates_are_clipped() {
        let m = [1.3, -0.2, 0.5];
        assert_eq!(count_out_of_range(&m), 2);
        assert_eq!(epv_annuity(&m, 0, 2, 1.0).unwrap(), 1.0);
        assert_eq!(epv_annuity(&m, 1, 2, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn weights_trivial_cases() {
        let m = [0.2, 0.4, 0.1, 0.3];
        let w1 = epv_weights(&m, 1, 0.9).unwrap();
        assert_eq!(w1.dim(), (4, 4));
        assert!(w1.iter().all(|x| *x == 0.0));
        let w2 = epv_weights(&m, 2, 1.0).unwrap();
        assert_eq!(w2.dim(), (4, 4));
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(w2[[i, j]], if i == j { -1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn weights_match_finite_differences() {
        let m: Vec<f64> = (0..9).map(|i| 0.02 + 0.07 * ((i * 7 % 5) as f64)).collect();
        let (term, v) = (5, 0.95);
        let w = epv_weights(&m, term, v).unwrap();
        let h = 1e-6;
        for i in 0..annuity_width(m.len(), term) {
            for j in 0..m.len() {
                let mut up = m.clone();
                let mut dn = m.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (epv_annuity(&up, i, term, v).unwrap() - epv_annuity(&dn, i, term, v).unwrap()) / (2.0 * h);
                assert!((fd - w[[i, j]]).abs() < 1e-8, "row {i} col {j}: {fd} vs {}", w[[i, j]]);
                if j < i || j > i + term - 2 {
                    assert_eq!(w[[i, j]], 0.0);
                }
            }
        }
    }

    fn constant_panel(group: &str, rows: usize, ages: usize, rate: f64) -> Panel {
        Panel {
            group: group.into(),
            years: (0..rows as i32).collect(),
            ages: (0..ages as u32).collect(),
            y: Array2::zeros((rows, ages)),
            intercept: Array1::from_elem(ages, rate.ln()),
            scale: None,
        }
    }

    #[test]
    fn apply_identity_and_constant_annuity() {
        let data = GroupedPanel::new(vec![constant_panel("a", 3, 5, 0.5), constant_panel("b", 2, 5, 0.5)]).unwrap();
        let block = data.panels()[0].y.view();
        assert_eq!(apply_transform(&DecisionTransform::Identity, "a", &block).unwrap(), block.to_owned());

        let g = DecisionTransform::Annuity(AnnuityTransform::from_panels(&data, 3, 1.0).unwrap());
        let out = apply_transform(&g, "a", &block).unwrap();
        assert_eq!(out.dim(), (3, 4));
        assert!(out.iter().all(|x| (x - 1.75).abs() < 1e-15));

        let g1 = DecisionTransform::Annuity(AnnuityTransform::from_panels(&data, 1, 0.9).unwrap());
        let ones = apply_transform(&g1, "b", &data.panels()[1].y.view()).unwrap();
        assert_eq!(ones, Array2::<f64>::ones((2, 5)));

        assert!(matches!(
            apply_transform(&g, "zzz", &block),
            Err(Error::Transform(TransformError::UnknownGroup(_)))
        ));
    }

    #[test]
    fn identity_decision_errors_equal_group_errors() {
        let (data, _) = synthesize(7, 2, &[6, 9], &[0.3, 0.1], 8).unwrap();
        let l = Loading::project(&Array2::from_shape_fn((7, 2), |(i, j)| ((i + 2 * j) as f64).sin()).view()).unwrap();
        assert_eq!(
            decision_errors(&data, &l, &DecisionTransform::Identity).unwrap(),
            group_errors(&data, &l).unwrap()
        );
    }

    #[test]
    fn decision_errors_vanish_in_span() {
        let (data, truth) = synthesize(8, 1, &[5, 5], &[0.0, 0.0], 2).unwrap();
        let l = Loading::new(truth.loading).unwrap();
        let g = DecisionTransform::Annuity(AnnuityTransform::from_panels(&data, 3, 0.95).unwrap());
        for d in decision_errors(&data, &l, &g).unwrap() {
            assert!(d < 1e-24);
        }
        let e = decision_errors(&data, &l, &DecisionTransform::Elementwise(ElementwiseMap::Exp)).unwrap();
        assert!(e.iter().all(|d| *d < 1e-24));
    }

    #[test]
    fn elementwise_derivatives() {
        for map in [ElementwiseMap::Exp, ElementwiseMap::Tanh] {
            for x in [-1.3, 0.0, 0.7] {
                let h = 1e-6;
                let fd = (map.value(x + h) - map.value(x - h)) / (2.0 * h);
                assert!((fd - map.derivative(x)).abs() < 1e-9);
            }
        }
    }
}
