//! Batch front end: a JSON experiment config in, CSV or JSON results out.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use config::{ExperimentConfig, Format, SchemaError};
use run::RunError;

#[derive(Debug, Parser)]
#[command(name = "cdma-pme", version, about = "Large-system analysis and Monte Carlo for posterior-mean CDMA detection")]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Result file; overrides `output` in the config. Defaults to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides `format` in the config.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Overrides `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for Monte Carlo trials.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    exit_code: i32,
    message: String,
}

fn fail(e: RunError) -> ExitCode {
    let code = e.exit_code();
    let report = ErrorReport {
        error: e.kind(),
        exit_code: code,
        message: e.to_string(),
    };
    eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
    ExitCode::from(code as u8)
}

fn load(args: &Args) -> Result<ExperimentConfig, RunError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| SchemaError::Read(format!("{}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        match cfg.mc.as_mut() {
            Some(mc) => mc.seed = seed,
            None => log::warn!("--seed ignored: the config has no `mc` section"),
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    let cfg = match load(&args) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let output = args.output.clone().or_else(|| cfg.output.clone());
    let format = args.format.unwrap_or_else(|| run::format_for(&cfg, output.as_deref()));
    match run::run(&cfg, output.as_deref(), format).and_then(|o| run::write_files(&o).map(|_| o.success)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => fail(e),
    }
}
