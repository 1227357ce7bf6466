//! Experiment runner: reads a TOML configuration, runs one experiment and
//! writes `manifest.json`, `results.csv`, `results.json` and `plot.svg`.

pub mod config;
pub mod experiments;
pub mod output;
pub mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

use config::{ConfigErrors, ExperimentConfig};
use output::{to_json, Artifacts};
use plot::{emit_plot, PlotError};

/// The only environment override: where artifacts go.
pub const OUT_ENV: &str = "MVLIFT_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Core(#[from] mvlift::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot render the resolved configuration: {0}")]
    Toml(#[from] toml::ser::Error),
    #[error("manifest {0} has no `config_toml` entry")]
    Manifest(PathBuf),
    #[error(transparent)]
    Plot(#[from] PlotError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 2 for invariant violations detected inside a solver, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(mvlift::Error::ClippedMassExceeded { .. }) => 2,
            _ => 1,
        }
    }
}

/// Outcome of a completed run.
#[derive(Debug)]
pub struct Report {
    pub dir: PathBuf,
    pub violations: Vec<String>,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        if self.violations.is_empty() {
            0
        } else {
            2
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Reads a configuration file, or the configuration recorded in a
/// `manifest.json`.
pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: serde_json::Value = serde_json::from_str(&text)?;
        let toml = manifest["config_toml"].as_str().ok_or_else(|| CliError::Manifest(path.to_path_buf()))?;
        return Ok(config::parse(toml)?);
    }
    Ok(config::parse(&text)?)
}

/// The resolved configuration in the input schema; parsing it gives the
/// same configuration back.
pub fn resolved_toml(cfg: &ExperimentConfig) -> Result<String, CliError> {
    Ok(toml::to_string(&toml::Table::try_from(cfg)?)?)
}

pub fn output_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    opts.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("mvlift-out").join(cfg.experiment.name()))
}

fn manifest(cfg: &ExperimentConfig) -> Result<String, CliError> {
    to_json(&json!({
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "config": cfg,
        "config_toml": resolved_toml(cfg)?,
        "versions": {
            "mvlift-core": mvlift::VERSION,
            "mvlift-cli": env!("CARGO_PKG_VERSION"),
        },
    }))
}

/// Runs the experiment described by `path`. Artifacts are removed again if
/// anything fails before all of them are written.
pub fn run(path: &Path, opts: &RunOptions) -> Result<Report, CliError> {
    let mut cfg = load(path)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let dir = output_dir(&cfg, opts);
    let mut artifacts = Artifacts::open(&dir)?;
    let outcome = experiments::run(&cfg)?;
    artifacts.write("manifest.json", &manifest(&cfg)?)?;
    artifacts.write("results.csv", &outcome.table.to_csv())?;
    artifacts.write("results.json", &to_json(&outcome.json)?)?;
    if let Some((series, style)) = &outcome.plot {
        artifacts.write("plot.svg", &emit_plot(series, style)?)?;
    }
    let dir = artifacts.dir().to_path_buf();
    artifacts.commit();
    Ok(Report { dir, violations: outcome.violations })
}
