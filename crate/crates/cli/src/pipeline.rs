//! Shared steps of the commands: loading panels, fitting, forecasting, scoring.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fairfactor::dataset::{build_panel, parse_hmd_1x1, split_train_test, GroupedPanel, MortalityTable};
use fairfactor::factor::fit_pca;
use fairfactor::forecast::{fit_factor_models, predict_epv, predict_mortality, DriftARModel, MortalityForecast};
use fairfactor::metrics::{metrics, MetricsReport, Quantity};
use fairfactor::optimizer::{fit_fair_decision, fit_fair_factor};
use fairfactor::transform::{annuity_width, AgeCurve, AnnuityTransform, DecisionTransform, ElementwiseMap};
use fairfactor::{DenseMatrix, FitResult};
use ndarray::s;
use serde_json::{json, Value};

use crate::config::{ModelKind, RunConfig, TransformKind};
use crate::error::{CliError, CliResult};

/// Panels of every configured group. Without a cutoff, `train` holds all
/// years and `test` is `None`.
#[derive(Debug, Clone)]
pub struct Data {
    pub train: GroupedPanel,
    pub test: Option<GroupedPanel>,
}

impl Data {
    pub fn labels(&self) -> Vec<String> {
        self.train.panels().iter().map(|p| p.group.clone()).collect()
    }

    pub fn ages(&self) -> Vec<u32> {
        self.train.panels()[0].ages.clone()
    }

    pub fn test(&self) -> CliResult<&GroupedPanel> {
        self.test.as_ref().ok_or_else(|| CliError::Config("this command needs `cutoff`".into()))
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Reads every group's file (each distinct file once) and builds the panels.
pub fn load_data(cfg: &RunConfig, base: &Path) -> CliResult<Data> {
    cfg.require_groups()?;
    let mut tables: BTreeMap<PathBuf, MortalityTable> = BTreeMap::new();
    let mut train = Vec::with_capacity(cfg.groups.len());
    let mut test = Vec::with_capacity(cfg.groups.len());
    for g in &cfg.groups {
        let path = resolve(base, &g.path);
        if !tables.contains_key(&path) {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io("read", &path, e))?;
            let table = parse_hmd_1x1(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            tables.insert(path.clone(), table);
        }
        let table = &tables[&path];
        let years = match g.years {
            Some([lo, hi]) => (lo, hi),
            None => {
                let all = table.years();
                match (all.first(), all.last()) {
                    (Some(&lo), Some(&hi)) => (lo, hi),
                    _ => return Err(CliError::Data(format!("{} holds no records", path.display()))),
                }
            }
        };
        let panel = build_panel(table, g.column, &g.label, (cfg.ages[0], cfg.ages[1]), years, cfg.preprocessing)?;
        match cfg.cutoff {
            Some(cutoff) => {
                let (tr, te) = split_train_test(&panel, cutoff)?;
                train.push(tr);
                test.push(te);
            }
            None => train.push(panel),
        }
    }
    let train = GroupedPanel::new(train)?;
    let test = if test.is_empty() { None } else { Some(GroupedPanel::new(test)?) };
    Ok(Data { train, test })
}

/// Annuity-due pricing transform built from the training intercepts.
pub fn annuity(cfg: &RunConfig, train: &GroupedPanel) -> CliResult<DecisionTransform> {
    let t = &cfg.transform;
    let a = AnnuityTransform::from_panels(train, t.term, t.discount)?.with_linearization(t.linearization);
    Ok(DecisionTransform::Annuity(a))
}

/// The decision transform named by `transform.kind`.
pub fn decision_transform(cfg: &RunConfig, train: &GroupedPanel) -> CliResult<DecisionTransform> {
    Ok(match cfg.transform.kind {
        TransformKind::Identity => DecisionTransform::Identity,
        TransformKind::Exp => DecisionTransform::Elementwise(ElementwiseMap::Exp),
        TransformKind::Tanh => DecisionTransform::Elementwise(ElementwiseMap::Tanh),
        TransformKind::Annuity => annuity(cfg, train)?,
    })
}

/// Fits `model`; the penalty is ignored for the plain factor model.
pub fn fit_model(cfg: &RunConfig, model: ModelKind, lambda: f64, train: &GroupedPanel) -> CliResult<FitResult> {
    Ok(match model {
        ModelKind::Factor => fit_pca(train, cfg.rank)?,
        ModelKind::FairFactor => fit_fair_factor(train, cfg.rank, &cfg.optimizer_options(lambda))?,
        ModelKind::FairDecision => {
            let g = decision_transform(cfg, train)?;
            fit_fair_decision(train, cfg.rank, &cfg.optimizer_options(lambda), &g)?
        }
    })
}

/// Largest deviation of `L^T L / N` from the identity.
pub fn normalization_defect(fit: &FitResult) -> f64 {
    let l = fit.loading.matrix();
    let gram = l.t().dot(l) / l.nrows() as f64;
    gram.indexed_iter()
        .map(|((i, j), v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max)
}

pub struct ModelForecast {
    pub models: Vec<Vec<DriftARModel>>,
    pub forecast: MortalityForecast,
    /// Forecast years per group.
    pub years: Vec<Vec<i32>>,
}

/// Forecast length: the configured horizon, else the longest test period.
pub fn horizon(cfg: &RunConfig, data: &Data) -> CliResult<usize> {
    if let Some(h) = cfg.forecast.horizon {
        return Ok(h);
    }
    Ok(data.test()?.group_rows().into_iter().max().unwrap_or(1))
}

pub fn forecast_fit(cfg: &RunConfig, fit: &FitResult, train: &GroupedPanel, h: usize) -> CliResult<ModelForecast> {
    let models = fit_factor_models(fit, cfg.forecast.p_max, cfg.forecast.d_max)?;
    let curves: Vec<AgeCurve> = train.panels().iter().map(AgeCurve::of_panel).collect();
    let forecast = predict_mortality(fit, &models, &curves, h)?;
    let years = train
        .panels()
        .iter()
        .map(|p| {
            let last = *p.years.last().expect("panel has rows");
            (1..=h as i32).map(|k| last + k).collect()
        })
        .collect();
    Ok(ModelForecast { models, forecast, years })
}

/// Mortality and EPV accuracy of predicted rates against the test panels.
pub struct Evaluation {
    pub mortality: MetricsReport,
    pub epv: MetricsReport,
}

/// Scores `predicted` rates (at least as many rows as each test group) on the test years.
pub fn evaluate_rates(test: &GroupedPanel, predicted: &[DenseMatrix], pricing: &DecisionTransform) -> CliResult<Evaluation> {
    if predicted.len() != test.groups() {
        return Err(CliError::Data(format!("{} predicted groups for {} test groups", predicted.len(), test.groups())));
    }
    let actual: Vec<DenseMatrix> = test.panels().iter().map(|p| p.rates()).collect();
    let mut aligned = Vec::with_capacity(predicted.len());
    for (p, a) in predicted.iter().zip(&actual) {
        if p.nrows() < a.nrows() || p.ncols() != a.ncols() {
            return Err(CliError::Data(format!(
                "predictions are {}x{} but the test block is {}x{}",
                p.nrows(),
                p.ncols(),
                a.nrows(),
                a.ncols()
            )));
        }
        aligned.push(p.slice(s![..a.nrows(), ..]).to_owned());
    }
    let mortality = metrics(&actual, &aligned, Quantity::Mortality)?;
    let epv = metrics(&predict_epv(&actual, pricing)?, &predict_epv(&aligned, pricing)?, Quantity::Epv)?;
    Ok(Evaluation { mortality, epv })
}

/// `metrics.csv` rows `model,quantity,group,scope,key,value` of one report.
pub fn metrics_rows(model: &str, report: &MetricsReport, labels: &[String], ages: &[u32], years: &[Vec<i32>]) -> Vec<String> {
    let q = report.quantity;
    let mut rows = Vec::new();
    for (k, label) in labels.iter().enumerate() {
        rows.push(format!("{model},{q},{label},group,rows,{}", report.rows[k]));
        rows.push(format!("{model},{q},{label},group,rmse,{}", report.rmse_by_group[k]));
    }
    rows.push(format!("{model},{q},all,total,rmse,{}", report.rmse_total));
    rows.push(format!("{model},{q},all,fairness,difference,{}", report.fairness_difference));
    for (k, label) in labels.iter().enumerate() {
        for (i, v) in report.rmse_by_age[k].iter().enumerate() {
            rows.push(format!("{model},{q},{label},age,{},{v}", ages[i]));
        }
    }
    let width = report.rmse_by_age.first().map_or(0, Vec::len);
    for i in 0..width {
        let gap = fairfactor::metrics::fairness_difference(&report.rmse_by_age.iter().map(|r| r[i]).collect::<Vec<_>>());
        rows.push(format!("{model},{q},all,age_difference,{},{gap}", ages[i]));
    }
    for (k, label) in labels.iter().enumerate() {
        for (t, v) in report.rmse_by_year[k].iter().enumerate() {
            rows.push(format!("{model},{q},{label},year,{},{v}", years[k][t]));
        }
    }
    let common = report.rmse_by_year.iter().map(Vec::len).min().unwrap_or(0);
    for t in 0..common {
        let gap = fairfactor::metrics::fairness_difference(&report.rmse_by_year.iter().map(|r| r[t]).collect::<Vec<_>>());
        rows.push(format!("{model},{q},all,year_difference,{},{gap}", years[0][t]));
    }
    rows
}

/// Header of the summary tables: `model,rmse_<group>...,fairness_difference,rmse_total`.
pub fn table_columns(labels: &[String]) -> String {
    let mut cols = String::from("model");
    for l in labels {
        cols.push_str(&format!(",rmse_{l}"));
    }
    cols.push_str(",fairness_difference,rmse_total");
    cols
}

pub fn table_row(model: &str, report: &MetricsReport) -> String {
    let mut row = model.to_string();
    for v in &report.rmse_by_group {
        row.push_str(&format!(",{v}"));
    }
    row.push_str(&format!(",{},{}", report.fairness_difference, report.rmse_total));
    row
}

/// Starting ages of the EPV columns.
pub fn epv_ages(ages: &[u32], term: usize) -> Vec<u32> {
    ages[..annuity_width(ages.len(), term)].to_vec()
}

pub fn convergence_records(model: ModelKind, fit: &FitResult) -> Vec<Value> {
    fit.diagnostics
        .iter()
        .map(|d| {
            json!({
                "model": model.slug(),
                "iteration": d.iteration,
                "objective": d.objective,
                "unfairness": d.unfairness,
                "step_size": d.step_size,
            })
        })
        .collect()
}

pub fn fit_summary(model: ModelKind, lambda: f64, labels: &[String], fit: &FitResult) -> Value {
    let errors: serde_json::Map<String, Value> =
        labels.iter().zip(&fit.group_errors).map(|(l, e)| (l.clone(), json!(e))).collect();
    json!({
        "model": model.slug(),
        "lambda": if model == ModelKind::Factor { 0.0 } else { lambda },
        "rank": fit.loading.rank(),
        "objective": fit.objective_trace.last(),
        "group_errors": errors,
        "unfairness": fit.unfairness,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "degenerate_spectrum": fit.degenerate_spectrum,
        "normalization_defect": normalization_defect(fit),
    })
}

pub fn model_summaries(labels: &[String], models: &[Vec<DriftARModel>]) -> Value {
    let per_group: serde_json::Map<String, Value> = labels
        .iter()
        .zip(models)
        .map(|(l, ms)| (l.clone(), serde_json::to_value(ms).expect("models serialize")))
        .collect();
    Value::Object(per_group)
}
