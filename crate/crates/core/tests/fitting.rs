mod common;

use fairfactor::cv::{cross_validate_lambda, FoldMode};
use fairfactor::factor::fit_pca;
use fairfactor::linalg::max_principal_angle;
use fairfactor::optimizer::{fit_fair_decision, fit_fair_factor, OptimizerOptions};
use fairfactor::transform::{decision_errors, AnnuityTransform, DecisionTransform, Linearization};
use fairfactor::dataset::{synthesize_with, SyntheticConfig};
use fairfactor::{GroupedPanel, Loading};

fn angle(a: &Loading, b: &Loading) -> f64 {
    max_principal_angle(&a.orthonormal().view(), &b.orthonormal().view()).unwrap()
}

#[test]
fn identity_decision_fit_is_the_fair_factor_fit() {
    for seed in 0..4 {
        let data = common::instance(10, 1, &[25, 20], &[0.2, 0.1], seed);
        for lambda in [0.0, 5.0] {
            // the step-size stopping rule stops near, not at, the shared stationary point
            let opts = OptimizerOptions {
                lambda,
                restarts: 3,
                seed,
                convergence_epsilon: 1e-10,
                stagnation_tolerance: 0.0,
                ..Default::default()
            };
            let a = fit_fair_factor(&data, 1, &opts).unwrap();
            let b = fit_fair_decision(&data, 1, &opts, &DecisionTransform::Identity).unwrap();
            assert!(angle(&a.loading, &b.loading) <= 1e-6);
            if lambda == 0.0 {
                let pca = fit_pca(&data, 1).unwrap();
                assert!(angle(&b.loading, &pca.loading) <= 1e-6);
            }
        }
    }
}

#[test]
fn unfairness_does_not_grow_with_the_penalty() {
    let grid = [0.0, 0.1, 1.0, 10.0];
    let mut violations = 0;
    for seed in 0..21 {
        let data = common::instance(15, 1, &[30, 30], &[0.2, 0.1], 100 + seed);
        let u: Vec<f64> = grid
            .iter()
            .map(|&lambda| {
                let opts = OptimizerOptions { lambda, restarts: 20, seed, ..Default::default() };
                fit_fair_factor(&data, 1, &opts).unwrap().unfairness
            })
            .collect();
        violations += u.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-9) + 1e-15).count();
    }
    assert_eq!(violations, 0, "{violations} non-monotone steps");
}

#[test]
fn decision_traces_are_monotone() {
    let data = common::instance(20, 1, &[20, 20], &[0.1, 0.05], 3);
    for linearization in [Linearization::Taylor, Linearization::Exact] {
        let g = DecisionTransform::Annuity(
            AnnuityTransform::from_panels(&data, 10, 1.0 / 1.05).unwrap().with_linearization(linearization),
        );
        let fit = fit_fair_decision(&data, 1, &OptimizerOptions { lambda: 50.0, restarts: 2, ..Default::default() }, &g).unwrap();
        assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let d = decision_errors(&data, &fit.loading, &g).unwrap();
        assert_eq!(d, fit.group_errors);
    }
}

#[test]
fn annuity_penalty_narrows_the_decision_gap() {
    let data = common::instance(20, 1, &[30, 30], &[0.15, 0.05], 9);
    let g = DecisionTransform::Annuity(AnnuityTransform::from_panels(&data, 10, 1.0 / 1.05).unwrap());
    let gap = |lambda: f64| {
        let fit = fit_fair_decision(&data, 1, &OptimizerOptions { lambda, restarts: 3, ..Default::default() }, &g).unwrap();
        (fit.group_errors[0] - fit.group_errors[1]).abs()
    };
    let (base, fair) = (gap(0.0), gap(1e4));
    assert!(fair < base, "gap {fair} vs {base}");
}

/// Two groups with different loadings; the first has the stronger signal, so
/// an unpenalized fit serves it at the expense of the second.
fn disparate_groups(seed: u64) -> GroupedPanel {
    let mut strong = SyntheticConfig::new(12, 1, vec![30, 30], vec![0.03, 0.03], seed);
    strong.innovation = 0.3;
    let mut weak = SyntheticConfig::new(12, 1, vec![30, 30], vec![0.03, 0.03], seed + 1000);
    weak.innovation = 0.15;
    let a = synthesize_with(&strong).unwrap().0;
    let b = synthesize_with(&weak).unwrap().0;
    GroupedPanel::new(vec![a.panels()[0].clone(), b.panels()[1].clone()]).unwrap()
}

#[test]
fn cv_prefers_a_penalty_under_a_tight_constraint() {
    let data = disparate_groups(4);
    let opts = OptimizerOptions { restarts: 2, ..Default::default() };
    let table = cross_validate_lambda(
        &data,
        1,
        &[0.0, 1.0, 10.0],
        3,
        None,
        &DecisionTransform::Identity,
        &opts,
        FoldMode::Random,
    )
    .unwrap();
    assert!(table.rows[0].mean_gap > table.lambda_c);
    assert!(table.chosen_lambda > 0.0, "{table:?}");
}

#[test]
fn cv_random_mode_is_reproducible() {
    let data = common::instance(8, 1, &[20, 20], &[0.2, 0.1], 5);
    let opts = OptimizerOptions { restarts: 1, seed: 3, ..Default::default() };
    let run = || {
        cross_validate_lambda(&data, 1, &[0.0, 2.0], 4, None, &DecisionTransform::Identity, &opts, FoldMode::Random)
            .unwrap()
    };
    assert_eq!(run(), run());
}
