//! Run configuration: a TOML file, flag overrides, validation and hashing.
//!
//! Every section is optional; omitted keys take the defaults documented in the
//! README. Unknown keys anywhere are rejected.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fairfactor::cv::{FoldMode, DEFAULT_FOLDS, DEFAULT_GRID};
use fairfactor::dataset::{Preprocessing, Sex};
use fairfactor::optimizer::{LineSearch, OptimizerOptions};
use fairfactor::transform::Linearization;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Factor,
    #[default]
    FairFactor,
    FairDecision,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Factor => "Factor",
            ModelKind::FairFactor => "Fair Factor",
            ModelKind::FairDecision => "Fair Decision",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ModelKind::Factor => "factor",
            ModelKind::FairFactor => "fair-factor",
            ModelKind::FairDecision => "fair-decision",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Identity,
    Exp,
    Tanh,
    #[default]
    Annuity,
}

/// One protected group read from an HMD `Mx_1x1` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSource {
    pub label: String,
    /// Relative paths are resolved against the config file's directory.
    pub path: PathBuf,
    pub column: Sex,
    /// Inclusive year window; defaults to every year in the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub years: Option<[i32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub term: usize,
    pub discount: f64,
    pub linearization: Linearization,
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self { kind: TransformKind::Annuity, term: 10, discount: 1.0 / 1.05, linearization: Linearization::Taylor }
    }
}

/// Optimizer settings other than the penalty and seed, which live at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    pub max_iterations: usize,
    pub convergence_epsilon: f64,
    pub line_search: LineSearch,
    pub restarts: usize,
    pub stagnation_window: usize,
    pub stagnation_tolerance: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        let d = OptimizerOptions::default();
        Self {
            max_iterations: d.max_iterations,
            convergence_epsilon: d.convergence_epsilon,
            line_search: d.line_search,
            restarts: d.restarts,
            stagnation_window: d.stagnation_window,
            stagnation_tolerance: d.stagnation_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSpec {
    pub p_max: usize,
    pub d_max: usize,
    /// Forecast length; defaults to the number of test years.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

impl Default for ForecastSpec {
    fn default() -> Self {
        Self { p_max: 5, d_max: 2, horizon: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSpec {
    pub grid: Vec<f64>,
    pub folds: usize,
    /// Feasibility threshold on the mean held-out gap; defaults to half the gap at `lambda = 0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_c: Option<f64>,
    pub mode: FoldMode,
}

impl Default for CvSpec {
    fn default() -> Self {
        Self { grid: DEFAULT_GRID.to_vec(), folds: DEFAULT_FOLDS, lambda_c: None, mode: FoldMode::Contiguous }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproSpec {
    pub fair_factor_lambda: f64,
    pub fair_decision_lambda: f64,
}

impl Default for ReproSpec {
    fn default() -> Self {
        Self { fair_factor_lambda: 11.0, fair_decision_lambda: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSpec {
    pub ages: usize,
    pub rank: usize,
    pub labels: Vec<String>,
    pub group_sizes: Vec<usize>,
    pub noise_scales: Vec<f64>,
    pub drift: f64,
    pub innovation: f64,
    pub first_year: i32,
    /// Last training year written into the generated config.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<i32>,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            ages: 20,
            rank: 1,
            labels: vec!["female".into(), "male".into()],
            group_sizes: vec![60, 60],
            noise_scales: vec![0.05, 0.1],
            drift: -0.02,
            innovation: 0.05,
            first_year: 1950,
            cutoff: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub groups: Vec<GroupSource>,
    /// Inclusive age window.
    pub ages: [u32; 2],
    /// Last training year; later years form the test set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<i32>,
    pub preprocessing: Preprocessing,
    pub rank: usize,
    pub model: ModelKind,
    pub lambda: f64,
    pub transform: TransformSpec,
    pub optimizer: OptimizerSpec,
    pub forecast: ForecastSpec,
    pub cv: CvSpec,
    pub repro: ReproSpec,
    pub simulate: SimulateSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            groups: Vec::new(),
            ages: [0, 85],
            cutoff: None,
            preprocessing: Preprocessing::Center,
            rank: 1,
            model: ModelKind::FairFactor,
            lambda: 0.0,
            transform: TransformSpec::default(),
            optimizer: OptimizerSpec::default(),
            forecast: ForecastSpec::default(),
            cv: CvSpec::default(),
            repro: ReproSpec::default(),
            simulate: SimulateSpec::default(),
        }
    }
}

fn check(ok: bool, message: impl FnOnce() -> String) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(message()))
    }
}

fn parse_override(assignment: &str) -> CliResult<(Vec<String>, toml::Value)> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("override key `{key}` is malformed")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> CliResult<()> {
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut node = table;
    for key in parents {
        let entry = node.entry(key.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override path `{}` crosses a non-table key", path.join("."))))?;
    }
    node.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Parses `text`, applies `key=value` overrides, and validates the result.
    pub fn from_toml(text: &str, overrides: &[String]) -> CliResult<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {}", e.message())))?;
        for assignment in overrides {
            let (path, value) = parse_override(assignment)?;
            apply_override(&mut table, &path, value)?;
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("invalid config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn optimizer_options(&self, lambda: f64) -> OptimizerOptions {
        let o = &self.optimizer;
        OptimizerOptions {
            lambda,
            max_iterations: o.max_iterations,
            convergence_epsilon: o.convergence_epsilon,
            line_search: o.line_search,
            restarts: o.restarts,
            seed: self.seed,
            stagnation_window: o.stagnation_window,
            stagnation_tolerance: o.stagnation_tolerance,
        }
    }

    pub fn age_count(&self) -> usize {
        (self.ages[1] - self.ages[0]) as usize + 1
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> CliResult<()> {
        check(self.ages[0] <= self.ages[1], || format!("age window {:?} is empty", self.ages))?;
        check(self.rank >= 1, || "rank must be at least 1".into())?;
        check(self.rank <= self.age_count(), || {
            format!("rank {} exceeds the {} ages in the window", self.rank, self.age_count())
        })?;
        for (name, l) in [
            ("lambda", self.lambda),
            ("repro.fair_factor_lambda", self.repro.fair_factor_lambda),
            ("repro.fair_decision_lambda", self.repro.fair_decision_lambda),
        ] {
            check(l.is_finite() && l >= 0.0, || format!("{name} must be finite and non-negative, got {l}"))?;
        }
        let t = &self.transform;
        check(t.term >= 1 && t.term <= self.age_count() + 1, || {
            format!("annuity term {} does not fit {} ages", t.term, self.age_count())
        })?;
        check(t.discount > 0.0 && t.discount <= 1.0, || format!("discount {} must lie in (0, 1]", t.discount))?;
        self.optimizer_options(self.lambda).validate().map_err(|e| CliError::Config(e.to_string()))?;
        check(self.forecast.d_max <= 2, || format!("forecast.d_max must be at most 2, got {}", self.forecast.d_max))?;
        check(self.forecast.horizon != Some(0), || "forecast.horizon must be at least 1".into())?;
        check(self.cv.folds >= 2, || format!("cv.folds must be at least 2, got {}", self.cv.folds))?;
        check(!self.cv.grid.is_empty() && self.cv.grid.iter().all(|l| l.is_finite() && *l >= 0.0), || {
            "cv.grid must be non-empty, finite and non-negative".into()
        })?;
        check(self.cv.lambda_c.is_none_or(|c| c >= 0.0), || "cv.lambda_c must be non-negative".into())?;
        let mut labels = BTreeSet::new();
        for g in &self.groups {
            check(!g.label.is_empty() && !g.label.contains([',', '"', '\n']), || {
                format!("group label `{}` must be non-empty and free of commas and quotes", g.label)
            })?;
            check(labels.insert(g.label.as_str()), || format!("group label `{}` is repeated", g.label))?;
            if let Some([lo, hi]) = g.years {
                check(lo <= hi, || format!("year window [{lo}, {hi}] of group `{}` is empty", g.label))?;
            }
        }
        let s = &self.simulate;
        check(s.group_sizes.len() >= 2, || "simulate.group_sizes needs at least two groups".into())?;
        check(s.noise_scales.len() == s.group_sizes.len(), || {
            "simulate.noise_scales must have one entry per group".into()
        })?;
        check(s.labels.is_empty() || s.labels.len() == s.group_sizes.len(), || {
            "simulate.labels must be empty or have one entry per group".into()
        })?;
        check(s.rank >= 1 && s.rank <= s.ages, || "simulate.rank must lie in 1..=simulate.ages".into())?;
        Ok(())
    }

    /// Checks that the commands reading data have at least two groups.
    pub fn require_groups(&self) -> CliResult<()> {
        check(self.groups.len() >= 2, || format!("need at least two [[groups]], found {}", self.groups.len()))
    }

    pub fn require_cutoff(&self) -> CliResult<i32> {
        self.cutoff.ok_or_else(|| CliError::Config("this command needs `cutoff` (the last training year)".into()))
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes to JSON");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}
