//! The four commands of the command-line tool.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{ExperimentConfig, SimGrid};
use crate::error::{HarnessError, Result};
use crate::experiments::{run_fit, run_forecast, run_select, run_simulation};
use crate::output::{ensure_dir, method_seconds, summarize, write_csv, write_json, MetricsRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Fit,
    Forecast,
    Select,
}

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub replications: Option<usize>,
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(r) = self.replications {
            cfg.replications = r;
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        cfg.validate()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: Command,
    harness_version: &'static str,
    library_version: &'static str,
    seed: u64,
    config: &'a ExperimentConfig,
    grid: Option<SimGrid>,
    rows: usize,
    failures: usize,
    elapsed_seconds: f64,
    method_seconds: std::collections::BTreeMap<String, f64>,
    outputs: Vec<&'static str>,
}

fn check_command(command: Command, cfg: &ExperimentConfig) -> Result<()> {
    let ok = match command {
        Command::Simulate => cfg.experiment.is_simulation(),
        Command::Forecast | Command::Fit | Command::Select => cfg.data.is_some(),
    };
    if ok {
        Ok(())
    } else {
        Err(HarnessError::Config(format!(
            "experiment '{}' cannot be run by this command",
            cfg.experiment.name()
        )))
    }
}

/// Default output directory of a configuration.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out
        .clone()
        .unwrap_or_else(|| Path::new("results").join(cfg.experiment.name()))
}

/// Runs `command` and writes its outputs; returns the output directory.
pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<PathBuf> {
    check_command(command, cfg)?;
    let out = output_dir(cfg);
    let start = Instant::now();
    let mut rows: Vec<MetricsRow> = Vec::new();
    // Outputs are computed before the directory is created so that a failed
    // run leaves nothing behind.
    let outputs: Vec<&'static str> = match command {
        Command::Simulate => {
            rows = run_simulation(cfg)?;
            ensure_dir(&out)?;
            write_csv(&out.join("results.csv"), &rows)?;
            write_csv(&out.join("summary.csv"), &summarize(&rows))?;
            vec!["results.csv", "summary.csv"]
        }
        Command::Forecast => {
            let res = run_forecast(cfg)?;
            rows = res.rows;
            ensure_dir(&out)?;
            write_csv(&out.join("results.csv"), &rows)?;
            write_csv(&out.join("forecasts.csv"), &res.forecasts)?;
            vec!["results.csv", "forecasts.csv"]
        }
        Command::Fit => {
            let report = run_fit(cfg)?;
            ensure_dir(&out)?;
            write_json(&out.join("fit.json"), &report)?;
            vec!["fit.json"]
        }
        Command::Select => {
            let report = run_select(cfg)?;
            ensure_dir(&out)?;
            write_json(&out.join("selection.json"), &report)?;
            vec!["selection.json"]
        }
    };
    let manifest = Manifest {
        command,
        harness_version: env!("CARGO_PKG_VERSION"),
        library_version: tlvar::VERSION,
        seed: cfg.seed,
        config: cfg,
        grid: cfg.grid(),
        rows: rows.len(),
        failures: rows.iter().filter(|r| r.is_failure()).count(),
        elapsed_seconds: start.elapsed().as_secs_f64(),
        method_seconds: method_seconds(&rows),
        outputs,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(out)
}
