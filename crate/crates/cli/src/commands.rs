use std::collections::BTreeMap;
use std::path::Path;

use fairfactor::cv::cross_validate_lambda;
use fairfactor::dataset::{synthesize_with, write_hmd_1x1, MortalityRecord, MortalityTable, Sex, SyntheticConfig};
use fairfactor::forecast::predict_epv;
use fairfactor::serialize_rows;
use fairfactor::{DecisionTransform, DenseMatrix};
use ndarray::Array2;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{GroupSource, ModelKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{tidy_rows, Artifacts};
use crate::pipeline;

fn artifacts(cfg: &RunConfig) -> Artifacts {
    Artifacts::new(cfg.hash(), cfg.seed)
}

fn matrix_json(m: &DenseMatrix) -> Value {
    serialize_rows(m, serde_json::value::Serializer).expect("matrix serializes")
}

pub fn ingest(cfg: &RunConfig, base: &Path) -> CliResult<Artifacts> {
    let data = pipeline::load_data(cfg, base)?;
    let mut out = artifacts(cfg);
    out.text("panel_train.csv", &data.train.to_csv());
    let mut groups = Vec::new();
    for (k, p) in data.train.panels().iter().enumerate() {
        let test_rows = data.test.as_ref().map_or(0, |t| t.panels()[k].rows());
        groups.push(json!({
            "label": p.group,
            "first_year": p.years.first(),
            "last_train_year": p.years.last(),
            "train_rows": p.rows(),
            "test_rows": test_rows,
        }));
    }
    if let Some(test) = &data.test {
        out.text("panel_test.csv", &test.to_csv());
        let rows = test.panels().iter().flat_map(|p| tidy_rows(&p.group, &p.years, &p.ages, &p.rates()));
        out.csv("rates_test.csv", "group,year,age,value", rows);
    }
    out.json(
        "ingest.json",
        json!({ "groups": groups, "ages": data.ages(), "cutoff": cfg.cutoff, "preprocessing": cfg.preprocessing }),
    );
    Ok(out)
}

pub fn fit(cfg: &RunConfig, base: &Path) -> CliResult<Artifacts> {
    let data = pipeline::load_data(cfg, base)?;
    let fit = pipeline::fit_model(cfg, cfg.model, cfg.lambda, &data.train)?;
    let labels = data.labels();
    let ages = data.ages();
    let mut out = artifacts(cfg);
    let r = fit.loading.rank();
    let columns: String = std::iter::once("age".to_string()).chain((1..=r).map(|j| format!("factor_{j}"))).collect::<Vec<_>>().join(",");
    let l = fit.loading.matrix();
    out.csv(
        "loading.csv",
        &columns,
        ages.iter().enumerate().map(|(i, age)| {
            std::iter::once(age.to_string()).chain(l.row(i).iter().map(|v| v.to_string())).collect::<Vec<_>>().join(",")
        }),
    );
    let mut factor_rows = Vec::new();
    for (path, panel) in fit.factors.iter().zip(data.train.panels()) {
        for (t, year) in panel.years.iter().enumerate() {
            for j in 0..r {
                factor_rows.push(format!("{},{year},{},{}", path.group, j + 1, path.matrix[[t, j]]));
            }
        }
    }
    out.csv("factors.csv", "group,year,factor,value", factor_rows);
    out.json("fit.json", pipeline::fit_summary(cfg.model, cfg.lambda, &labels, &fit));
    out.jsonl("convergence.jsonl", pipeline::convergence_records(cfg.model, &fit));
    Ok(out)
}

pub fn cv(cfg: &RunConfig, base: &Path) -> CliResult<Artifacts> {
    let data = pipeline::load_data(cfg, base)?;
    let g = match cfg.model {
        ModelKind::FairDecision => pipeline::decision_transform(cfg, &data.train)?,
        _ => DecisionTransform::Identity,
    };
    let opts = cfg.optimizer_options(0.0);
    let table =
        cross_validate_lambda(&data.train, cfg.rank, &cfg.cv.grid, cfg.cv.folds, cfg.cv.lambda_c, &g, &opts, cfg.cv.mode)?;
    let mut out = artifacts(cfg);
    out.csv(
        "cv.csv",
        "lambda,cv_error,mean_gap,feasible",
        table.rows.iter().map(|r| format!("{},{},{},{}", r.lambda, r.cv_error, r.mean_gap, r.feasible)),
    );
    let mut summary = serde_json::to_value(&table).expect("table serializes");
    if let Some(map) = summary.as_object_mut() {
        map.insert("folds".into(), json!(cfg.cv.folds));
        map.insert("mode".into(), json!(cfg.cv.mode));
        map.insert("model".into(), json!(cfg.model.slug()));
    }
    out.json("cv.json", summary);
    Ok(out)
}

pub fn forecast(cfg: &RunConfig, base: &Path) -> CliResult<Artifacts> {
    cfg.require_cutoff()?;
    let data = pipeline::load_data(cfg, base)?;
    let fit = pipeline::fit_model(cfg, cfg.model, cfg.lambda, &data.train)?;
    let fc = pipeline::forecast_fit(cfg, &fit, &data.train, pipeline::horizon(cfg, &data)?)?;
    let labels = data.labels();
    let ages = data.ages();
    let mut out = artifacts(cfg);
    let rows = labels
        .iter()
        .zip(&fc.years)
        .zip(&fc.forecast.rates)
        .flat_map(|((l, years), rates)| tidy_rows(l, years, &ages, rates));
    out.csv("forecast.csv", "group,year,age,value", rows);
    out.json(
        "models.json",
        json!({
            "model": cfg.model.slug(),
            "factor_models": pipeline::model_summaries(&labels, &fc.models),
            "clipped_rates": fc.forecast.clipped,
        }),
    );
    Ok(out)
}

pub fn price(cfg: &RunConfig, base: &Path) -> CliResult<Artifacts> {
    cfg.require_cutoff()?;
    let data = pipeline::load_data(cfg, base)?;
    let test = data.test()?;
    let pricing = pipeline::annuity(cfg, &data.train)?;
    let fit = pipeline::fit_model(cfg, cfg.model, cfg.lambda, &data.train)?;
    let fc = pipeline::forecast_fit(cfg, &fit, &data.train, pipeline::horizon(cfg, &data)?)?;
    let observed = predict_epv(&test.panels().iter().map(|p| p.rates()).collect::<Vec<_>>(), &pricing)?;
    let predicted = predict_epv(&fc.forecast.rates, &pricing)?;
    let ages = pipeline::epv_ages(&data.ages(), cfg.transform.term);
    let mut rows = Vec::new();
    for (p, epv) in test.panels().iter().zip(&observed) {
        rows.extend(tidy_rows(&format!("observed,{}", p.group), &p.years, &ages, epv));
    }
    for ((label, years), epv) in data.labels().iter().zip(&fc.years).zip(&predicted) {
        rows.extend(tidy_rows(&format!("forecast,{label}"), years, &ages, epv));
    }
    let mut out = artifacts(cfg);
    out.csv("epv.csv", "source,group,year,age,value", rows);
    Ok(out)
}

/// Reads tidy `group,year,age,value` predictions aligned to the test panels.
fn read_predictions(path: &Path, test: &fairfactor::GroupedPanel) -> CliResult<Vec<DenseMatrix>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io("read", path, e))?;
    let mut cells: BTreeMap<(String, i32, u32), f64> = BTreeMap::new();
    let mut seen_header = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line != "group,year,age,value" {
                return Err(CliError::Data(format!("{}: expected header group,year,age,value", path.display())));
            }
            seen_header = true;
            continue;
        }
        let bad = || CliError::Data(format!("{}:{}: malformed row `{line}`", path.display(), i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let year: i32 = f[1].parse().map_err(|_| bad())?;
        let age: u32 = f[2].parse().map_err(|_| bad())?;
        let value: f64 = f[3].parse().map_err(|_| bad())?;
        if !value.is_finite() {
            return Err(bad());
        }
        cells.insert((f[0].to_string(), year, age), value);
    }
    test.panels()
        .iter()
        .map(|p| {
            let mut m = Array2::<f64>::zeros((p.rows(), p.ages_len()));
            for (t, &year) in p.years.iter().enumerate() {
                for (a, &age) in p.ages.iter().enumerate() {
                    m[[t, a]] = *cells.get(&(p.group.clone(), year, age)).ok_or_else(|| {
                        CliError::Data(format!("{}: no prediction for {} {year} age {age}", path.display(), p.group))
                    })?;
                }
            }
            Ok(m)
        })
        .collect()
}

pub fn evaluate(cfg: &RunConfig, base: &Path, predictions: Option<&Path>) -> CliResult<Artifacts> {
    cfg.require_cutoff()?;
    let data = pipeline::load_data(cfg, base)?;
    let test = data.test()?;
    let pricing = pipeline::annuity(cfg, &data.train)?;
    let (label, rates) = match predictions {
        Some(path) => ("Predictions".to_string(), read_predictions(path, test)?),
        None => {
            let fit = pipeline::fit_model(cfg, cfg.model, cfg.lambda, &data.train)?;
            let fc = pipeline::forecast_fit(cfg, &fit, &data.train, pipeline::horizon(cfg, &data)?)?;
            (cfg.model.label().to_string(), fc.forecast.rates)
        }
    };
    let eval = pipeline::evaluate_rates(test, &rates, &pricing)?;
    let labels = data.labels();
    let ages = data.ages();
    let years: Vec<Vec<i32>> = test.panels().iter().map(|p| p.years.clone()).collect();
    let mut rows = pipeline::metrics_rows(&label, &eval.mortality, &labels, &ages, &years);
    rows.extend(pipeline::metrics_rows(&label, &eval.epv, &labels, &pipeline::epv_ages(&ages, cfg.transform.term), &years));
    let mut out = artifacts(cfg);
    out.csv("metrics.csv", "model,quantity,group,scope,key,value", rows);
    let columns = format!("quantity,{}", pipeline::table_columns(&labels));
    out.csv(
        "summary.csv",
        &columns,
        [
            format!("mortality,{}", pipeline::table_row(&label, &eval.mortality)),
            format!("epv,{}", pipeline::table_row(&label, &eval.epv)),
        ],
    );
    Ok(out)
}

pub fn simulate(cfg: &RunConfig) -> CliResult<Artifacts> {
    let s = &cfg.simulate;
    let synth = SyntheticConfig {
        ages: s.ages,
        rank: s.rank,
        group_sizes: s.group_sizes.clone(),
        noise_scales: s.noise_scales.clone(),
        seed: cfg.seed,
        drift: s.drift,
        innovation: s.innovation,
        first_year: s.first_year,
        labels: s.labels.clone(),
    };
    let (data, truth) = synthesize_with(&synth)?;
    let mut out = artifacts(cfg);
    let mut groups = Vec::new();
    for p in data.panels() {
        let rates = p.rates();
        let mut records = Vec::with_capacity(rates.len());
        for (t, &year) in p.years.iter().enumerate() {
            for (i, &age) in p.ages.iter().enumerate() {
                records.push(MortalityRecord {
                    year,
                    age,
                    open_age: false,
                    female: None,
                    male: None,
                    total: Some(rates[[t, i]]),
                });
            }
        }
        let table = MortalityTable::from_records(records)?;
        let file = format!("{}.txt", p.group);
        let title = format!("{} synthetic death rates for group {}", out.header(), p.group);
        out.raw(&file, write_hmd_1x1(&table, &title));
        groups.push(GroupSource { label: p.group.clone(), path: file.into(), column: Sex::Total, years: None });
    }
    let shortest = *s.group_sizes.iter().min().expect("at least two groups");
    let cutoff = s.cutoff.unwrap_or(s.first_year + (shortest * 3 / 4) as i32 - 1);
    let generated = RunConfig {
        groups,
        ages: [0, s.ages as u32 - 1],
        cutoff: Some(cutoff),
        output_dir: RunConfig::default().output_dir,
        ..cfg.clone()
    };
    generated.validate()?;
    out.text("config.toml", &generated.to_toml());
    let labels: Vec<String> = data.panels().iter().map(|p| p.group.clone()).collect();
    out.json(
        "truth.json",
        json!({
            "labels": labels,
            "loading": matrix_json(&truth.loading),
            "factors": truth.factors.iter().map(matrix_json).collect::<Vec<_>>(),
            "noise_scales": s.noise_scales,
            "intercepts": data.panels().iter().map(|p| p.intercept.to_vec()).collect::<Vec<_>>(),
        }),
    );
    Ok(out)
}

/// Everything `repro` computes for one model.
struct ReproRun {
    model: ModelKind,
    lambda: f64,
    fit: fairfactor::FitResult,
    forecast: pipeline::ModelForecast,
    eval: pipeline::Evaluation,
}

pub fn repro(cfg: &RunConfig, base: &Path) -> CliResult<Artifacts> {
    cfg.require_cutoff()?;
    let data = pipeline::load_data(cfg, base)?;
    let test = data.test()?;
    let pricing = pipeline::annuity(cfg, &data.train)?;
    let h = pipeline::horizon(cfg, &data)?;
    let decision_cfg = RunConfig {
        transform: crate::config::TransformSpec { kind: crate::config::TransformKind::Annuity, ..cfg.transform.clone() },
        ..cfg.clone()
    };
    let plan = [
        (ModelKind::Factor, 0.0),
        (ModelKind::FairFactor, cfg.repro.fair_factor_lambda),
        (ModelKind::FairDecision, cfg.repro.fair_decision_lambda),
    ];
    let runs: Vec<CliResult<ReproRun>> = plan
        .par_iter()
        .map(|&(model, lambda)| {
            let fit = pipeline::fit_model(&decision_cfg, model, lambda, &data.train)?;
            let forecast = pipeline::forecast_fit(cfg, &fit, &data.train, h)?;
            let eval = pipeline::evaluate_rates(test, &forecast.forecast.rates, &pricing)?;
            Ok(ReproRun { model, lambda, fit, forecast, eval })
        })
        .collect();
    let runs: Vec<ReproRun> = runs.into_iter().collect::<CliResult<_>>()?;

    let labels = data.labels();
    let ages = data.ages();
    let epv_ages = pipeline::epv_ages(&ages, cfg.transform.term);
    let years: Vec<Vec<i32>> = test.panels().iter().map(|p| p.years.clone()).collect();
    let columns = pipeline::table_columns(&labels);
    let mut out = artifacts(cfg);
    out.csv("table1.csv", &columns, runs.iter().map(|r| pipeline::table_row(r.model.label(), &r.eval.mortality)));
    out.csv("table2.csv", &columns, runs.iter().map(|r| pipeline::table_row(r.model.label(), &r.eval.epv)));
    let mut metric_rows = Vec::new();
    for r in &runs {
        metric_rows.extend(pipeline::metrics_rows(r.model.label(), &r.eval.mortality, &labels, &ages, &years));
        metric_rows.extend(pipeline::metrics_rows(r.model.label(), &r.eval.epv, &labels, &epv_ages, &years));
    }
    out.csv("metrics.csv", "model,quantity,group,scope,key,value", metric_rows);
    let mut forecast_rows = Vec::new();
    let mut loading_rows = Vec::new();
    for r in &runs {
        for ((label, yrs), rates) in labels.iter().zip(&r.forecast.years).zip(&r.forecast.forecast.rates) {
            forecast_rows.extend(tidy_rows(&format!("{},{label}", r.model.label()), yrs, &ages, rates));
        }
        let l = r.fit.loading.matrix();
        for (i, age) in ages.iter().enumerate() {
            for j in 0..l.ncols() {
                loading_rows.push(format!("{},{age},{},{}", r.model.label(), j + 1, l[[i, j]]));
            }
        }
    }
    out.csv("forecast.csv", "model,group,year,age,value", forecast_rows);
    out.csv("loadings.csv", "model,age,factor,value", loading_rows);
    out.jsonl("convergence.jsonl", runs.iter().flat_map(|r| pipeline::convergence_records(r.model, &r.fit)));
    out.json(
        "repro.json",
        json!({
            "cutoff": cfg.cutoff,
            "horizon": h,
            "annuity": { "term": cfg.transform.term, "discount": cfg.transform.discount },
            "models": runs.iter().map(|r| json!({
                "fit": pipeline::fit_summary(r.model, r.lambda, &labels, &r.fit),
                "factor_models": pipeline::model_summaries(&labels, &r.forecast.models),
                "clipped_rates": r.forecast.forecast.clipped,
            })).collect::<Vec<_>>(),
        }),
    );
    Ok(out)
}
