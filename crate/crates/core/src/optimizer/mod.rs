//! Penalized objectives, their gradients and the projected gradient fits for the
//! fair factor model and the fair decision model, for any number of groups.
//!
//! Both fits iterate `L <- sqrt(N) * polar(L - eta * G(L))` from a PCA start plus
//! random restarts, and keep the restart with the lowest final objective.

mod line_search;
mod loss;

pub use line_search::{geometric_grid, grid_minimize, line_search, LineSearch, StepOutcome};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::GroupedPanel;
use crate::error::{Error, LinalgError, Result};
use crate::factor::{factor_paths, pairwise_unfairness, pca_loading, FitResult, IterationRecord, Loading};
use crate::linalg::DenseMatrix;
use crate::transform::{decision_errors, DecisionTransform};
use loss::{DecisionLoss, GroupLoss, PenalizedObjective, ReconstructionLoss};

/// Settings shared by [`fit_fair_factor`] and [`fit_fair_decision`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    /// Fairness penalty weight.
    pub lambda: f64,
    pub max_iterations: usize,
    /// Threshold on the relative change of the reconstruction (or its transform).
    pub convergence_epsilon: f64,
    pub line_search: LineSearch,
    /// Total number of starts, the first being the PCA solution.
    pub restarts: usize,
    pub seed: u64,
    /// Stop after this many consecutive iterations improving by less than `stagnation_tolerance`.
    pub stagnation_window: usize,
    pub stagnation_tolerance: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            max_iterations: 2000,
            convergence_epsilon: 1e-6,
            line_search: LineSearch::default(),
            restarts: 5,
            seed: 0,
            stagnation_window: 20,
            stagnation_tolerance: 1e-14,
        }
    }
}

impl OptimizerOptions {
    pub fn with_lambda(lambda: f64) -> Self {
        Self { lambda, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if !(self.convergence_epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "convergence epsilon must be positive, got {}",
                self.convergence_epsilon
            )));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("at least one start is required".into()));
        }
        if self.stagnation_window == 0 || !(self.stagnation_tolerance >= 0.0) {
            return Err(Error::InvalidArgument("invalid stagnation guard".into()));
        }
        self.line_search.validate()
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("penalty must be finite and non-negative, got {lambda}")))
    }
}

fn check_loading(data: &GroupedPanel, loading: &Loading) -> Result<()> {
    if loading.ages() != data.ages_len() {
        return Err(Error::Shape(format!("loading has {} rows for {} ages", loading.ages(), data.ages_len())));
    }
    Ok(())
}

/// `L(L) + lambda * sum_{k<k'} (L_k - L_k')^2` with reconstruction errors.
pub fn fair_factor_objective(data: &GroupedPanel, loading: &Loading, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    check_loading(data, loading)?;
    let loss = ReconstructionLoss::new(data);
    Ok(PenalizedObjective { loss: &loss, penalty: lambda }.value(loading.matrix())?.objective)
}

/// `-(2/TN) Y^T Y L + 4 lambda sum_{k<k'} (L_k - L_k') (Y_k'^T Y_k' L/(T_k' N) - Y_k^T Y_k L/(T_k N))`.
pub fn fair_factor_gradient(data: &GroupedPanel, loading: &Loading, lambda: f64) -> Result<DenseMatrix> {
    check_lambda(lambda)?;
    check_loading(data, loading)?;
    let loss = ReconstructionLoss::new(data);
    Ok(PenalizedObjective { loss: &loss, penalty: lambda }.gradient(loading.matrix())?.1)
}

/// Fair decision objective `(1/T) sum_k T_k D_k + lambda sum_{k<k'} (D_k - D_k')^2`.
///
/// For an annuity transform with [`Linearization::Taylor`](crate::transform::Linearization)
/// each `D_k` is the weighted quadratic form `(1/T_k) sum_t ||W_t (m~_t - m_t)||^2`
/// that the optimizer minimizes; with `Exact` it is the plain EPV error.
pub fn fair_decision_objective(
    data: &GroupedPanel,
    loading: &Loading,
    lambda: f64,
    g: &DecisionTransform,
) -> Result<f64> {
    check_lambda(lambda)?;
    check_loading(data, loading)?;
    let loss = DecisionLoss::new(data, g)?;
    Ok(PenalizedObjective { loss: &loss, penalty: lambda }.value(loading.matrix())?.objective)
}

/// Gradient of [`fair_decision_objective`] with respect to the loading.
pub fn fair_decision_gradient(
    data: &GroupedPanel,
    loading: &Loading,
    lambda: f64,
    g: &DecisionTransform,
) -> Result<DenseMatrix> {
    check_lambda(lambda)?;
    check_loading(data, loading)?;
    let loss = DecisionLoss::new(data, g)?;
    Ok(PenalizedObjective { loss: &loss, penalty: lambda }.gradient(loading.matrix())?.1)
}

/// Fair factor model by projected gradient descent.
pub fn fit_fair_factor(data: &GroupedPanel, r: usize, opts: &OptimizerOptions) -> Result<FitResult> {
    opts.validate()?;
    let loss = ReconstructionLoss::new(data);
    let run = fit_penalized(data, r, opts, &loss)?;
    let errors = crate::factor::group_errors(data, &run.loading)?;
    Ok(run.into_result(data, errors))
}

/// Fair decision model by projected gradient descent; `group_errors` holds the
/// exact decision errors of the returned loading.
pub fn fit_fair_decision(
    data: &GroupedPanel,
    r: usize,
    opts: &OptimizerOptions,
    g: &DecisionTransform,
) -> Result<FitResult> {
    opts.validate()?;
    let loss = DecisionLoss::new(data, g)?;
    let run = fit_penalized(data, r, opts, &loss)?;
    let errors = decision_errors(data, &run.loading, g)?;
    Ok(run.into_result(data, errors))
}

struct Run {
    loading: Loading,
    trace: Vec<f64>,
    diagnostics: Vec<IterationRecord>,
    iterations: usize,
    converged: bool,
    degenerate_spectrum: bool,
}

impl Run {
    fn into_result(self, data: &GroupedPanel, errors: Vec<f64>) -> FitResult {
        FitResult {
            factors: factor_paths(data, &self.loading),
            objective_trace: self.trace,
            unfairness: pairwise_unfairness(&errors),
            group_errors: errors,
            iterations: self.iterations,
            converged: self.converged,
            degenerate_spectrum: self.degenerate_spectrum,
            diagnostics: self.diagnostics,
            loading: self.loading,
        }
    }

    fn final_objective(&self) -> f64 {
        *self.trace.last().expect("trace starts with the initial objective")
    }
}

fn random_start(n: usize, r: usize, seed: u64, stream: u64) -> Result<Loading> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    for _ in 0..16 {
        let raw = DenseMatrix::from_shape_fn((n, r), |_| StandardNormal.sample(&mut rng));
        match Loading::project(&raw.view()) {
            Err(Error::Linalg(LinalgError::RankDeficient { .. })) => continue,
            other => return other,
        }
    }
    Err(LinalgError::RankDeficient { ratio: 0.0 }.into())
}

fn fit_penalized(data: &GroupedPanel, r: usize, opts: &OptimizerOptions, loss: &dyn GroupLoss) -> Result<Run> {
    let (pca, degenerate_spectrum) = pca_loading(data, r)?;
    let objective = PenalizedObjective { loss, penalty: opts.lambda };
    let runs: Vec<Result<Run>> = (0..opts.restarts)
        .into_par_iter()
        .map(|idx| {
            let start = if idx == 0 { pca.clone() } else { random_start(data.ages_len(), r, opts.seed, idx as u64)? };
            descend(&objective, start, opts)
        })
        .collect();
    let mut best: Option<Run> = None;
    for run in runs {
        let run = run?;
        let better = match &best {
            None => true,
            Some(b) => {
                let (a, c) = (run.final_objective(), b.final_objective());
                a < c - 1e-12 * c.abs().max(f64::MIN_POSITIVE)
            }
        };
        if better {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one start");
    best.degenerate_spectrum = degenerate_spectrum;
    best.loading = best.loading.canonicalize();
    Ok(best)
}

fn descend(objective: &PenalizedObjective<'_>, start: Loading, opts: &OptimizerOptions) -> Result<Run> {
    let mut loading = start;
    let (mut eval, mut grad) = objective.gradient(loading.matrix())?;
    if !eval.objective.is_finite() {
        return Err(LinalgError::NonFinite.into());
    }
    let mut trace = vec![eval.objective];
    let mut diagnostics =
        vec![IterationRecord { iteration: 0, objective: eval.objective, unfairness: eval.unfairness, step_size: 0.0 }];
    let mut converged = false;
    let mut stagnant = 0;
    let mut iterations = 0;
    let value = |l: &Loading| objective.value(l.matrix()).map(|e| e.objective);

    while iterations < opts.max_iterations {
        let mut scale = 1.0;
        let outcome = loop {
            match line_search(value, &loading, &grad, eval.objective, &opts.line_search, scale) {
                Err(Error::Linalg(LinalgError::RankDeficient { .. })) if scale > 1e-12 => scale *= 0.5,
                other => break other?,
            }
        };
        if outcome.step == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        let change = objective.relative_change(loading.matrix(), outcome.loading.matrix())?;
        let improvement = eval.objective - outcome.objective;
        loading = outcome.loading;
        (eval, grad) = objective.gradient(loading.matrix())?;
        trace.push(eval.objective);
        diagnostics.push(IterationRecord {
            iteration: iterations,
            objective: eval.objective,
            unfairness: eval.unfairness,
            step_size: outcome.step,
        });
        if change <= opts.convergence_epsilon {
            converged = true;
            break;
        }
        stagnant = if improvement < opts.stagnation_tolerance { stagnant + 1 } else { 0 };
        if stagnant >= opts.stagnation_window {
            converged = true;
            break;
        }
    }
    Ok(Run { loading, trace, diagnostics, iterations, converged, degenerate_spectrum: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthesize;
    use crate::factor::{fit_pca, reconstruction_error, unfairness};
    use crate::linalg::max_principal_angle;
    use crate::transform::ElementwiseMap;

    fn angle(a: &Loading, b: &Loading) -> f64 {
        max_principal_angle(&a.orthonormal().view(), &b.orthonormal().view()).unwrap()
    }

    #[test]
    fn zero_penalty_reduces_to_total_error() {
        let (data, truth) = synthesize(6, 1, &[8, 5], &[0.3, 0.1], 1).unwrap();
        let l = Loading::new(truth.loading).unwrap();
        let f = fair_factor_objective(&data, &l, 0.0).unwrap();
        let total = reconstruction_error(&data.stacked().view(), &l).unwrap();
        assert!((f - total).abs() < 1e-12 * total.max(1.0));
    }

    #[test]
    fn negative_penalty_rejected() {
        let (data, truth) = synthesize(4, 1, &[4, 4], &[0.3, 0.1], 1).unwrap();
        let l = Loading::new(truth.loading).unwrap();
        assert!(fair_factor_objective(&data, &l, -1.0).is_err());
        assert!(OptimizerOptions::with_lambda(-0.5).validate().is_err());
    }

    #[test]
    fn zero_penalty_gradient_is_gram_product() {
        let (data, truth) = synthesize(5, 2, &[6, 7], &[0.3, 0.2], 2).unwrap();
        let l = Loading::new(truth.loading).unwrap();
        let g = fair_factor_gradient(&data, &l, 0.0).unwrap();
        let y = data.stacked();
        let oracle = y.t().dot(&y).dot(l.matrix()) * (-2.0 / (13.0 * 5.0));
        assert!((g - oracle).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn identity_decision_matches_factor_objective() {
        let (data, _) = synthesize(6, 2, &[7, 9], &[0.4, 0.1], 3).unwrap();
        let l = fit_pca(&data, 2).unwrap().loading;
        let a = fair_factor_objective(&data, &l, 3.0).unwrap();
        let b = fair_decision_objective(&data, &l, 3.0, &DecisionTransform::Identity).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn zero_data_gives_zero_decision_gradient() {
        let (mut data, truth) = synthesize(5, 1, &[4, 4], &[0.1, 0.1], 3).unwrap();
        let panels: Vec<_> = data
            .panels()
            .iter()
            .cloned()
            .map(|mut p| {
                p.y.fill(0.0);
                p
            })
            .collect();
        data = GroupedPanel::new(panels).unwrap();
        let l = Loading::new(truth.loading).unwrap();
        let g = fair_decision_gradient(&data, &l, 2.0, &DecisionTransform::Elementwise(ElementwiseMap::Exp)).unwrap();
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn zero_penalty_fit_is_pca() {
        let (data, _) = synthesize(8, 2, &[15, 12], &[0.3, 0.15], 4).unwrap();
        let pca = fit_pca(&data, 2).unwrap();
        let fit = fit_fair_factor(&data, 2, &OptimizerOptions::default()).unwrap();
        assert!(angle(&fit.loading, &pca.loading) <= 1e-6);
    }

    #[test]
    fn noiseless_shared_subspace_is_recovered() {
        let (data, truth) = synthesize(7, 1, &[10, 10], &[0.0, 0.0], 5).unwrap();
        let fit = fit_fair_factor(&data, 1, &OptimizerOptions::with_lambda(5.0)).unwrap();
        let t = Loading::new(truth.loading).unwrap();
        assert!(angle(&fit.loading, &t) < 1e-6);
        assert!(fit.unfairness <= 1e-10);
    }

    #[test]
    fn penalty_trades_accuracy_for_parity() {
        let (data, _) = synthesize(10, 1, &[30, 30], &[0.2, 0.1], 6).unwrap();
        let base = fit_fair_factor(&data, 1, &OptimizerOptions::default()).unwrap();
        let fair = fit_fair_factor(&data, 1, &OptimizerOptions::with_lambda(10.0)).unwrap();
        assert!(fair.unfairness < base.unfairness);
        let total = |f: &FitResult| reconstruction_error(&data.stacked().view(), &f.loading).unwrap();
        assert!(total(&fair) >= total(&base) - 1e-12);
        assert!((unfairness(&data, &fair.loading).unwrap() - fair.unfairness).abs() < 1e-15);
    }

    #[test]
    fn traces_are_monotone() {
        let (data, _) = synthesize(10, 2, &[20, 25], &[0.3, 0.1], 7).unwrap();
        let opts = OptimizerOptions { lambda: 4.0, restarts: 3, ..Default::default() };
        let fit = fit_fair_factor(&data, 2, &opts).unwrap();
        assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let dev = fit.loading.matrix().t().dot(fit.loading.matrix()) / 10.0 - DenseMatrix::eye(2);
        assert!(dev.iter().all(|x| x.abs() < 1e-8));
    }

    #[test]
    fn deterministic_under_seed() {
        let (data, _) = synthesize(8, 1, &[12, 12], &[0.3, 0.1], 8).unwrap();
        let opts = OptimizerOptions { lambda: 2.0, restarts: 4, seed: 17, ..Default::default() };
        let a = fit_fair_factor(&data, 1, &opts).unwrap();
        let b = fit_fair_factor(&data, 1, &opts).unwrap();
        assert_eq!(a.loading, b.loading);
        assert_eq!(a.objective_trace, b.objective_trace);
    }

    #[test]
    fn backtracking_also_descends() {
        let (data, _) = synthesize(8, 1, &[12, 12], &[0.3, 0.1], 9).unwrap();
        let opts = OptimizerOptions {
            lambda: 2.0,
            line_search: LineSearch::Backtracking { initial_ratio: 1.0, shrink: 0.5, max_steps: 40 },
            ..Default::default()
        };
        let fit = fit_fair_factor(&data, 1, &opts).unwrap();
        assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}
