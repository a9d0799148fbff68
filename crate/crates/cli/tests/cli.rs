use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fairfactor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairfactor")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = fairfactor(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small simulated data set and the config `simulate` wrote for it.
fn simulated(extra: &[&str]) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let mut args = vec![
        "simulate",
        "--out",
        p(&sim),
        "--set",
        "simulate.ages=12",
        "--set",
        "simulate.group_sizes=[40, 40]",
        "--set",
        "optimizer.restarts=2",
    ];
    args.extend_from_slice(extra);
    ok(&args);
    (dir, sim.join("config.toml"))
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect()
}

fn error_record(out: &Output) -> serde_json::Value {
    serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).expect("stderr holds one JSON record")
}

#[test]
fn every_command_has_help() {
    for cmd in ["ingest", "fit", "cv", "forecast", "price", "evaluate", "simulate", "repro"] {
        let out = fairfactor(&[cmd, "--help"]);
        assert!(out.status.success());
        assert!(String::from_utf8_lossy(&out.stdout).contains("--config"), "{cmd}");
    }
}

#[test]
fn simulate_writes_hmd_files_truth_and_config() {
    let (dir, config) = simulated(&[]);
    let sim = config.parent().unwrap();
    for name in ["female.txt", "male.txt", "truth.json", "config.toml"] {
        assert!(sim.join(name).exists(), "{name}");
    }
    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(sim.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["loading"].as_array().unwrap().len(), 12);
    assert!(fs::read_to_string(sim.join("female.txt")).unwrap().starts_with("# config_hash="));

    let ingest = dir.path().join("ingest");
    ok(&["ingest", "--config", p(&config), "--out", p(&ingest)]);
    let panel = data_lines(&ingest.join("panel_train.csv"));
    assert_eq!(panel[0], "group,year,age,log_rate_centered,intercept");
    // 30 training years (1950..=1979) x 12 ages x 2 groups
    assert_eq!(panel.len() - 1, 2 * 30 * 12);
}

#[test]
fn factor_fit_ignores_lambda_and_emits_a_normalized_loading() {
    let (dir, config) = simulated(&[]);
    let read = |lambda: &str| {
        let out = dir.path().join(format!("fit_{lambda}"));
        ok(&["fit", "--config", p(&config), "--out", p(&out), "--model", "factor", "--lambda", lambda]);
        data_lines(&out.join("loading.csv"))
    };
    let a = read("0");
    let b = read("7.5");
    assert_eq!(a, b);
    assert_eq!(a[0], "age,factor_1");
    let col: Vec<f64> = a[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let gram = col.iter().map(|x| x * x).sum::<f64>() / col.len() as f64;
    assert!((gram - 1.0).abs() < 1e-10, "L^T L / N = {gram}");
}

#[test]
fn fit_writes_convergence_log() {
    let (dir, config) = simulated(&[]);
    let out = dir.path().join("fit");
    ok(&["fit", "--config", p(&config), "--out", p(&out), "--lambda", "3"]);
    let log = fs::read_to_string(out.join("convergence.jsonl")).unwrap();
    let mut lines = log.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["config_hash"].as_str().unwrap().len(), 64);
    let objectives: Vec<f64> = lines
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["objective"].as_f64().unwrap())
        .collect();
    assert!(!objectives.is_empty());
    assert!(objectives.windows(2).all(|w| w[1] <= w[0]));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(summary["lambda"], 3.0);
    assert!(summary["normalization_defect"].as_f64().unwrap() < 1e-10);
}

#[test]
fn evaluating_the_actuals_gives_zero_errors() {
    let (dir, config) = simulated(&[]);
    let ingest = dir.path().join("ingest");
    ok(&["ingest", "--config", p(&config), "--out", p(&ingest)]);
    let eval = dir.path().join("eval");
    ok(&["evaluate", "--config", p(&config), "--out", p(&eval), "--predictions", p(&ingest.join("rates_test.csv"))]);
    let rows = data_lines(&eval.join("metrics.csv"));
    assert_eq!(rows[0], "model,quantity,group,scope,key,value");
    for row in &rows[1..] {
        let f: Vec<&str> = row.split(',').collect();
        if f[4] != "rows" {
            assert_eq!(f[5].parse::<f64>().unwrap(), 0.0, "{row}");
        }
    }
}

#[test]
fn repro_tables_have_the_three_models() {
    let (dir, config) = simulated(&[]);
    let out = dir.path().join("repro");
    ok(&["repro", "--config", p(&config), "--out", p(&out)]);
    for table in ["table1.csv", "table2.csv"] {
        let lines = data_lines(&out.join(table));
        assert_eq!(lines[0], "model,rmse_female,rmse_male,fairness_difference,rmse_total");
        let models: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(models, ["Factor", "Fair Factor", "Fair Decision"]);
    }
}

#[test]
fn cv_and_price_outputs() {
    let (dir, config) = simulated(&[]);
    let cv = dir.path().join("cv");
    ok(&["cv", "--config", p(&config), "--out", p(&cv), "--set", "cv.grid=[0.0, 2.0]", "--set", "cv.folds=3"]);
    let rows = data_lines(&cv.join("cv.csv"));
    assert_eq!(rows.len(), 3);
    let price = dir.path().join("price");
    ok(&["price", "--config", p(&config), "--out", p(&price), "--set", "transform.term=1"]);
    let rows = data_lines(&price.join("epv.csv"));
    assert_eq!(rows[0], "source,group,year,age,value");
    assert!(rows[1..].iter().all(|r| r.ends_with(",1")), "a one-payment annuity is worth 1");
}

#[test]
fn thread_count_does_not_change_results() {
    let (dir, config) = simulated(&[]);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["forecast", "--config", p(&config), "--out", p(&a), "--lambda", "2", "--jobs", "1"]);
    ok(&["forecast", "--config", p(&config), "--out", p(&b), "--lambda", "2", "--jobs", "3"]);
    for name in ["forecast.csv", "models.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn config_errors_exit_with_2_and_write_nothing() {
    let (dir, config) = simulated(&[]);
    let out = dir.path().join("bad");
    let run = fairfactor(&["fit", "--config", p(&config), "--out", p(&out), "--set", "optimizer.lamda=1"]);
    assert_eq!(run.status.code(), Some(2));
    let record = error_record(&run);
    assert_eq!(record["error"]["kind"], "config");
    assert_eq!(record["error"]["command"], "fit");
    assert!(!out.exists());
    assert_eq!(fairfactor(&["forecast", "--out", p(&out)]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_3() {
    let (dir, config) = simulated(&[]);
    let sim = config.parent().unwrap();
    fs::write(sim.join("male.txt"), "title\n\nYear Age Female Male Total\n1950 0 0.1\n").unwrap();
    let out = dir.path().join("bad");
    let run = fairfactor(&["ingest", "--config", p(&config), "--out", p(&out)]);
    assert_eq!(run.status.code(), Some(3));
    assert!(error_record(&run)["error"]["message"].as_str().unwrap().contains("line 4"));
    assert!(!out.exists());
}

#[test]
fn numerical_errors_exit_with_4() {
    // ten training years are too few for the default order search
    let (dir, config) = simulated(&["--set", "simulate.cutoff=1959"]);
    let out = dir.path().join("bad");
    let run = fairfactor(&["forecast", "--config", p(&config), "--out", p(&out)]);
    assert_eq!(run.status.code(), Some(4), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(error_record(&run)["error"]["kind"], "numerical");
    assert!(!out.exists());
}
