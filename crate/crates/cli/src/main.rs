//! `scour`: synthetic data, cleaning, training, grid search, forecasting
//! and alerting for bridge-scour monitoring series.

mod layout;
mod report;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scour_core::config::RunConfig;
use scour_core::exec::Exec;
use scour_core::{Error, Result};

use crate::layout::Layout;

#[derive(Debug, Parser)]
#[command(name = "scour", version, about = "Bridge-scour forecasting and early-warning pipeline")]
struct Cli {
    /// Configuration file (`[section]` blocks of `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run seed; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory holding one subdirectory per stage.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (1 runs everything sequentially).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Override a configuration key, e.g. `--set train.units=64`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic raw-readings file and its ground truth.
    Synth,
    /// Parse raw readings, apply bias shifts and regrid to hourly steps.
    Ingest,
    /// Remove outliers, impute gaps and smooth the hourly series.
    Preprocess,
    /// Train an ensemble of independently seeded models.
    Train {
        /// Use the best configuration of the last grid search.
        #[arg(long)]
        from_grid: bool,
    },
    /// Train every grid cell repeatedly and rank the cells.
    Gridsearch,
    /// Forecast the test period with the trained ensemble.
    Forecast,
    /// Turn the forecast into a scour alert.
    Alert,
    /// Render plots and a summary table from existing artifacts.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Config { key: "--config".into(), message: format!("{} not found", path.display()) });
            }
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn executor(jobs: Option<usize>) -> Result<Exec> {
    match jobs {
        Some(0) => Err(Error::Config { key: "--jobs".into(), message: "must be >= 1".into() }),
        Some(1) => Ok(Exec::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            // Fails only if a pool already exists, in which case it is reused.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Ok(Exec::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Exec::Sequential),
        None if cfg!(feature = "parallel") => Ok(Exec::Parallel),
        None => Ok(Exec::Sequential),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let exec = executor(cli.jobs)?;
    let layout = Layout::new(&cli.out);
    match &cli.command {
        Command::Synth => stages::synth(&cfg, &layout),
        Command::Ingest => stages::ingest(&cfg, &layout),
        Command::Preprocess => stages::preprocess(&cfg, &layout, exec),
        Command::Train { from_grid } => stages::train(&cfg, &layout, *from_grid, exec),
        Command::Gridsearch => stages::gridsearch(&cfg, &layout, exec),
        Command::Forecast => stages::forecast(&cfg, &layout, exec),
        Command::Alert => stages::alert(&cfg, &layout),
        Command::Report => report::render(&cfg, &layout),
    }
}

/// First stderr line on failure: `ERROR code=<code> <message>`.
fn fail(code: &str, message: &str) -> ExitCode {
    eprintln!("ERROR code={code} {}", message.replace('\n', " "));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let code = fail("usage", e.kind().to_string().as_str());
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), &e.to_string()),
    }
}
