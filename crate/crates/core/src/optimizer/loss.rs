//! Per-group error terms and their sensitivities.
//!
//! Every objective here has the shape
//! `(1/T) sum_k T_k D_k(L) + lambda sum_{k<k'} (D_k - D_k')^2`, and every
//! gradient is assembled from per-group sensitivities `S_k` as
//! `(2/(T N)) sum_k S_k + 4 lambda sum_{k<k'} (D_k - D_k') (S_k/(T_k N) - S_k'/(T_k' N))`.
//!
//! For decision losses `S_k = sum_t (u_t y_t^T L + y_t u_t^T L)` where
//! `u_t = J_g(z_t)^T (g(z_t) - g(y_t))` and `z_t = L L^T y_t / N`, which is the
//! exact derivative. The reconstruction loss uses `S_k = -Y_k^T Y_k L`, the
//! derivative of the error restricted to `L^T L = N I`.

use ndarray::{Array2, ArrayView2, Zip};

use crate::dataset::GroupedPanel;
use crate::error::Result;
use crate::factor::pairwise_unfairness;
use crate::linalg::DenseMatrix;
use crate::transform::{apply_transform, epv_row, AgeCurve, AnnuityTransform, DecisionTransform, EpvBand, Linearization};

pub(crate) trait GroupLoss: Sync {
    fn groups(&self) -> usize;
    fn rows(&self, k: usize) -> usize;
    fn ages(&self) -> usize;
    fn error(&self, k: usize, loading: &DenseMatrix) -> Result<f64>;
    fn error_and_sensitivity(&self, k: usize, loading: &DenseMatrix) -> Result<(f64, DenseMatrix)>;
    /// What the stopping rule compares between iterates.
    fn image(&self, k: usize, loading: &DenseMatrix) -> Result<DenseMatrix>;
}

fn reconstruct(y: &ArrayView2<f64>, loading: &DenseMatrix) -> DenseMatrix {
    let n = loading.nrows() as f64;
    y.dot(loading).dot(&loading.t()) / n
}

fn squared_gap(a: &DenseMatrix, b: &ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, z)| (x - z) * (x - z)).sum()
}

/// `U^T (Y L) + Y^T (U L)` for row-stacked `u_t` and `y_t`.
fn symmetric_sensitivity(u: &DenseMatrix, y: &ArrayView2<f64>, loading: &DenseMatrix) -> DenseMatrix {
    u.t().dot(&y.dot(loading)) + y.t().dot(&u.dot(loading))
}

/// Reconstruction error with the restricted gradient (fair factor model).
pub(crate) struct ReconstructionLoss<'a> {
    blocks: Vec<ArrayView2<'a, f64>>,
}

impl<'a> ReconstructionLoss<'a> {
    pub(crate) fn new(data: &'a GroupedPanel) -> Self {
        Self { blocks: data.panels().iter().map(|p| p.y.view()).collect() }
    }
}

impl GroupLoss for ReconstructionLoss<'_> {
    fn groups(&self) -> usize {
        self.blocks.len()
    }

    fn rows(&self, k: usize) -> usize {
        self.blocks[k].nrows()
    }

    fn ages(&self) -> usize {
        self.blocks[0].ncols()
    }

    fn error(&self, k: usize, loading: &DenseMatrix) -> Result<f64> {
        let y = &self.blocks[k];
        Ok(squared_gap(&reconstruct(y, loading), y) / y.nrows() as f64)
    }

    fn error_and_sensitivity(&self, k: usize, loading: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
        let y = &self.blocks[k];
        let yl = y.dot(loading);
        Ok((self.error(k, loading)?, -y.t().dot(&yl)))
    }

    fn image(&self, k: usize, loading: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(reconstruct(&self.blocks[k], loading))
    }
}

enum DecisionKind<'a> {
    Identity,
    Elementwise(crate::transform::ElementwiseMap),
    AnnuityExact { annuity: &'a AnnuityTransform, curves: Vec<&'a AgeCurve> },
    AnnuityTaylor { curves: Vec<&'a AgeCurve>, observed: Vec<DenseMatrix>, weights: Vec<Vec<EpvBand>> },
}

/// Decision error `(1/T_k) ||g(Y_k L L^T / N) - g(Y_k)||^2` (or its Taylor surrogate).
pub(crate) struct DecisionLoss<'a> {
    data: &'a GroupedPanel,
    transform: &'a DecisionTransform,
    kind: DecisionKind<'a>,
    /// `g(Y_k)` for the exact kinds.
    targets: Vec<DenseMatrix>,
}

impl<'a> DecisionLoss<'a> {
    pub(crate) fn new(data: &'a GroupedPanel, transform: &'a DecisionTransform) -> Result<Self> {
        let kind = match transform {
            DecisionTransform::Identity => DecisionKind::Identity,
            DecisionTransform::Elementwise(map) => DecisionKind::Elementwise(*map),
            DecisionTransform::Annuity(annuity) => {
                let n = data.ages_len();
                let curves = data
                    .panels()
                    .iter()
                    .map(|p| annuity.checked_curve(&p.group, n))
                    .collect::<Result<Vec<_>>>()?;
                match annuity.linearization {
                    Linearization::Exact => DecisionKind::AnnuityExact { annuity, curves },
                    Linearization::Taylor => {
                        let mut observed = Vec::new();
                        let mut weights = Vec::new();
                        for (p, curve) in data.panels().iter().zip(&curves) {
                            let m = Array2::from_shape_fn(p.y.dim(), |(t, i)| {
                                (curve.scale[i] * p.y[[t, i]] + curve.intercept[i]).exp()
                            });
                            let w = m
                                .rows()
                                .into_iter()
                                .map(|row| EpvBand::new(&row.to_vec(), annuity.term(), annuity.discount()))
                                .collect::<std::result::Result<Vec<_>, _>>()?;
                            observed.push(m);
                            weights.push(w);
                        }
                        DecisionKind::AnnuityTaylor { curves, observed, weights }
                    }
                }
            }
        };
        let targets = match &kind {
            DecisionKind::AnnuityTaylor { .. } | DecisionKind::Identity => Vec::new(),
            _ => data
                .panels()
                .iter()
                .map(|p| apply_transform(transform, &p.group, &p.y.view()))
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(Self { data, transform, kind, targets })
    }

    fn block(&self, k: usize) -> ArrayView2<'a, f64> {
        self.data.panels()[k].y.view()
    }

    /// Returns the error and the row-stacked `u_t` vectors when `want_u` is set.
    fn evaluate(&self, k: usize, loading: &DenseMatrix, want_u: bool) -> Result<(f64, Option<DenseMatrix>)> {
        let y = self.block(k);
        let rows = y.nrows() as f64;
        let z = reconstruct(&y, loading);
        match &self.kind {
            DecisionKind::Identity => {
                let err = squared_gap(&z, &y) / rows;
                Ok((err, want_u.then(|| &z - &y)))
            }
            DecisionKind::Elementwise(map) => {
                let gz = z.mapv(|x| map.value(x));
                let resid = &gz - &self.targets[k];
                let err = resid.iter().map(|r| r * r).sum::<f64>() / rows;
                let u = want_u.then(|| {
                    let mut u = resid;
                    Zip::from(&mut u).and(&z).for_each(|r, &x| *r *= map.derivative(x));
                    u
                });
                Ok((err, u))
            }
            DecisionKind::AnnuityExact { annuity, curves } => {
                let curve = curves[k];
                let (t_k, n) = z.dim();
                let mut err = 0.0;
                let mut u = want_u.then(|| Array2::<f64>::zeros((t_k, n)));
                let mut back = vec![0.0; n];
                for t in 0..t_k {
                    let m = curve.rates(&z.row(t));
                    let m_slice = m.as_slice().expect("contiguous");
                    let p = epv_row(m_slice, annuity.term(), annuity.discount())?;
                    let resid: Vec<f64> = p.iter().zip(self.targets[k].row(t)).map(|(a, b)| a - b).collect();
                    err += resid.iter().map(|r| r * r).sum::<f64>();
                    if let Some(u) = u.as_mut() {
                        let band = EpvBand::new(m_slice, annuity.term(), annuity.discount())?;
                        band.tmul(&resid, &mut back);
                        for i in 0..n {
                            // clipping flattens the price in that rate
                            let dm = if (0.0..=1.0).contains(&m[i]) { curve.scale[i] * m[i] } else { 0.0 };
                            u[[t, i]] = dm * back[i];
                        }
                    }
                }
                Ok((err / rows, u))
            }
            DecisionKind::AnnuityTaylor { curves, observed, weights, .. } => {
                let curve = curves[k];
                let (t_k, n) = z.dim();
                let mut err = 0.0;
                let mut u = want_u.then(|| Array2::<f64>::zeros((t_k, n)));
                let mut diff = vec![0.0; n];
                let mut back = vec![0.0; n];
                for t in 0..t_k {
                    let band = &weights[k][t];
                    let mut e = vec![0.0; band.width()];
                    let m_tilde = curve.rates(&z.row(t));
                    for i in 0..n {
                        diff[i] = m_tilde[i] - observed[k][[t, i]];
                    }
                    band.mul(&diff, &mut e);
                    err += e.iter().map(|x| x * x).sum::<f64>();
                    if let Some(u) = u.as_mut() {
                        band.tmul(&e, &mut back);
                        for i in 0..n {
                            u[[t, i]] = curve.scale[i] * m_tilde[i] * back[i];
                        }
                    }
                }
                Ok((err / rows, u))
            }
        }
    }
}

impl GroupLoss for DecisionLoss<'_> {
    fn groups(&self) -> usize {
        self.data.groups()
    }

    fn rows(&self, k: usize) -> usize {
        self.data.panels()[k].rows()
    }

    fn ages(&self) -> usize {
        self.data.ages_len()
    }

    fn error(&self, k: usize, loading: &DenseMatrix) -> Result<f64> {
        Ok(self.evaluate(k, loading, false)?.0)
    }

    fn error_and_sensitivity(&self, k: usize, loading: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
        let (err, u) = self.evaluate(k, loading, true)?;
        let u = u.expect("requested");
        Ok((err, symmetric_sensitivity(&u, &self.block(k), loading)))
    }

    fn image(&self, k: usize, loading: &DenseMatrix) -> Result<DenseMatrix> {
        let recon = reconstruct(&self.block(k), loading);
        apply_transform(self.transform, &self.data.panels()[k].group, &recon.view())
    }
}

/// Value of a penalized objective at one point.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Evaluation {
    pub objective: f64,
    pub errors: Vec<f64>,
    pub unfairness: f64,
}

/// `(1/T) sum_k T_k D_k + lambda * sum_{k<k'} (D_k - D_k')^2` over a [`GroupLoss`].
pub(crate) struct PenalizedObjective<'a> {
    pub loss: &'a dyn GroupLoss,
    pub penalty: f64,
}

impl PenalizedObjective<'_> {
    fn total_rows(&self) -> f64 {
        (0..self.loss.groups()).map(|k| self.loss.rows(k)).sum::<usize>() as f64
    }

    fn combine(&self, errors: Vec<f64>) -> Evaluation {
        let t = self.total_rows();
        let fit: f64 = errors.iter().enumerate().map(|(k, e)| self.loss.rows(k) as f64 * e).sum::<f64>() / t;
        let unfairness = pairwise_unfairness(&errors);
        Evaluation { objective: fit + self.penalty * unfairness, errors, unfairness }
    }

    pub fn value(&self, loading: &DenseMatrix) -> Result<Evaluation> {
        let errors = (0..self.loss.groups()).map(|k| self.loss.error(k, loading)).collect::<Result<Vec<_>>>()?;
        Ok(self.combine(errors))
    }

    pub fn gradient(&self, loading: &DenseMatrix) -> Result<(Evaluation, DenseMatrix)> {
        let k_groups = self.loss.groups();
        let n = self.loss.ages() as f64;
        let t = self.total_rows();
        let mut errors = Vec::with_capacity(k_groups);
        let mut sens = Vec::with_capacity(k_groups);
        for k in 0..k_groups {
            let (e, s) = self.loss.error_and_sensitivity(k, loading)?;
            errors.push(e);
            sens.push(s);
        }
        let mut grad = Array2::<f64>::zeros(loading.dim());
        for s in &sens {
            grad.scaled_add(2.0 / (t * n), s);
        }
        if self.penalty != 0.0 {
            // sum over pairs of (D_k - D_k')(a_k - a_k') = sum_k a_k * sum_{k'} (D_k - D_k')
            for (k, s) in sens.iter().enumerate() {
                let c: f64 = errors.iter().map(|e| errors[k] - e).sum();
                if c != 0.0 {
                    grad.scaled_add(4.0 * self.penalty * c / (self.loss.rows(k) as f64 * n), s);
                }
            }
        }
        Ok((self.combine(errors), grad))
    }

    /// Relative change of the stacked images between two loadings.
    pub fn relative_change(&self, previous: &DenseMatrix, next: &DenseMatrix) -> Result<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..self.loss.groups() {
            let a = self.loss.image(k, previous)?;
            let b = self.loss.image(k, next)?;
            num += squared_gap(&b, &a.view());
            den += a.iter().map(|x| x * x).sum::<f64>();
        }
        Ok(if den > 0.0 {
            (num / den).sqrt()
        } else if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        })
    }
}
