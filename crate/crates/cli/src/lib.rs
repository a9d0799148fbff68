//! End-to-end workflow behind the `fairfactor` binary.
//!
//! Each command reads a [`config::RunConfig`], computes everything in memory,
//! and only then writes its artifacts under the output directory. Every file
//! starts with `# config_hash=<sha256> seed=<seed>` (JSON files carry the same
//! two values as fields), so re-running a configuration reproduces identical bytes.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "fairfactor", version, about = "Fair factor models for grouped mortality panels")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for restarts, folds and penalty grids.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub rank: Option<usize>,
    /// factor, fair-factor or fair-decision.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Last training year.
    #[arg(long, global = true)]
    pub cutoff: Option<i32>,
    /// Any config key, e.g. `--set cv.mode=random` or `--set transform.term=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Parse HMD files, build centered panels and split them at the cutoff.
    Ingest,
    /// Fit the configured model on the training years.
    Fit,
    /// Cross-validate the penalty over `cv.grid`.
    Cv,
    /// Forecast mortality rates over the test years.
    Forecast,
    /// Price annuities-due on observed and forecast rates.
    Price,
    /// Score forecasts (or a predictions file) against the test years.
    Evaluate {
        /// Tidy `group,year,age,value` rate predictions to score instead of a fitted model.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Write synthetic HMD files, their ground truth and a matching config.
    Simulate,
    /// Fit, forecast and score all three models and emit the summary tables.
    Repro,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Fit => "fit",
            Command::Cv => "cv",
            Command::Forecast => "forecast",
            Command::Price => "price",
            Command::Evaluate { .. } => "evaluate",
            Command::Simulate => "simulate",
            Command::Repro => "repro",
        }
    }
}

impl GlobalArgs {
    fn overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(v) = self.seed {
            out.push(format!("seed={v}"));
        }
        if let Some(v) = self.lambda {
            out.push(format!("lambda={v:?}"));
        }
        if let Some(v) = self.rank {
            out.push(format!("rank={v}"));
        }
        if let Some(v) = &self.model {
            out.push(format!("model=\"{v}\""));
        }
        if let Some(v) = self.cutoff {
            out.push(format!("cutoff={v}"));
        }
        if let Some(v) = &self.out {
            out.push(format!("output_dir={}", toml::Value::String(v.display().to_string())));
        }
        out.extend(self.overrides.iter().cloned());
        out
    }

    /// Loads the config with all flag overrides applied, and the directory that
    /// relative data paths are resolved against.
    pub fn resolve(&self) -> CliResult<(RunConfig, PathBuf)> {
        let overrides = self.overrides();
        match &self.config {
            Some(path) => {
                let cfg = RunConfig::load(path, &overrides)?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                Ok((cfg, base))
            }
            None => Ok((RunConfig::from_toml("", &overrides)?, PathBuf::new())),
        }
    }
}

fn execute(command: &Command, cfg: &RunConfig, base: &Path) -> CliResult<output::Artifacts> {
    match command {
        Command::Ingest => commands::ingest(cfg, base),
        Command::Fit => commands::fit(cfg, base),
        Command::Cv => commands::cv(cfg, base),
        Command::Forecast => commands::forecast(cfg, base),
        Command::Price => commands::price(cfg, base),
        Command::Evaluate { predictions } => commands::evaluate(cfg, base, predictions.as_deref()),
        Command::Simulate => commands::simulate(cfg),
        Command::Repro => commands::repro(cfg, base),
    }
}

/// Runs one command and returns the paths written.
pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let (cfg, base) = cli.global.resolve()?;
    let artifacts = match cli.global.jobs {
        Some(0) => return Err(CliError::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {n} worker threads: {e}")))?
            .install(|| execute(&cli.command, &cfg, &base))?,
        None => execute(&cli.command, &cfg, &base)?,
    };
    artifacts.commit(&cfg.output_dir)
}
