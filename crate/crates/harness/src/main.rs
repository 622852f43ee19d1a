use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tlvar_harness::app::{run, Command, Overrides};
use tlvar_harness::config::{ExperimentConfig, ExperimentKind};
use tlvar_harness::HarnessError;

#[derive(Parser)]
#[command(
    name = "tlvar",
    version,
    about = "Transfer learning for vector autoregressions"
)]
struct Cli {
    #[command(subcommand)]
    command: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run a simulation sweep (sim1, sim2 or sim3).
    Simulate(Common),
    /// Fit the transfer estimator on CSV data.
    Fit(Common),
    /// Rolling one-step forecasts on CSV data.
    Forecast(Common),
    /// Select ranks and the penalty constant on CSV data.
    Select(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in experiment to run without a configuration file.
    #[arg(long, value_parser = ["sim1", "sim2", "sim3"])]
    experiment: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match (&common.config, common.experiment.as_deref()) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => {
            let kind: ExperimentKind =
                serde_json::from_value(serde_json::Value::String(name.into()))
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
            ExperimentConfig::new(kind)
        }
        (None, None) => return Err(HarnessError::Config("pass --config or --experiment".into())),
    };
    Overrides {
        seed: common.seed,
        out: common.out.clone(),
        replications: common.replications,
        threads: common.threads,
    }
    .apply(&mut cfg)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, common) = match &cli.command {
        Verb::Simulate(c) => (Command::Simulate, c),
        Verb::Fit(c) => (Command::Fit, c),
        Verb::Forecast(c) => (Command::Forecast, c),
        Verb::Select(c) => (Command::Select, c),
    };
    match load(common).and_then(|cfg| run(command, &cfg)) {
        Ok(out) => {
            log::info!("wrote {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
