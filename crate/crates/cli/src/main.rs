//! `erw`: predictions, exact moments and Monte Carlo experiments for the
//! elephant random walk with delays.
//!
//! Exit codes: 0 success or PASS, 1 experiment gate FAIL, 2 usage or domain
//! error.

mod commands;
mod config;
mod error;
mod output;
mod svg;

use std::process::ExitCode;

use clap::Parser;
use erw_core::experiment::Verdict;

use crate::config::{resolve, Cli, CommandKind};
use crate::error::CliError;

fn run(cli: Cli) -> Result<Option<Verdict>, CliError> {
    let cfg = resolve(cli)?;
    let rendered = match cfg.command {
        CommandKind::Predict => commands::cmd_predict(&cfg)?,
        CommandKind::Simulate => commands::cmd_simulate(&cfg)?,
        CommandKind::Exact { distribution } => commands::cmd_exact(&cfg, distribution)?,
        CommandKind::Experiment(kind) => commands::cmd_experiment(&cfg, kind)?,
    };
    output::emit(
        &rendered,
        cfg.format,
        cfg.output_path.as_deref(),
        cfg.plot,
        cfg.command.name(),
    )?;
    for line in &rendered.summary {
        eprintln!("{line}");
    }
    Ok(rendered.verdict)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Some(Verdict::Fail)) => ExitCode::from(1),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
