//! Run configuration: command-line flags layered over an optional
//! `key = value` config file, layered over defaults.
//!
//! Config file format: one `key = value` per line, `#` starts a comment.
//! Keys: `p`, `q`, `r`, `theta`, `steps`, `trajectories`, `seed`,
//! `snapshots` (comma-separated), `output`, `format` (`csv` or `json`),
//! `plot` (`true`/`false`), `workers`, `reservoir`, `horizon`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use erw_core::experiment::{ExperimentInputs, ExperimentKind};
use erw_core::ModelParams;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "erw",
    version,
    about = "Elephant random walk with delays: predictions, exact moments, Monte Carlo experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print derived constants, regime and limit-theorem predictions
    Predict,
    /// Run a Monte Carlo ensemble and report snapshot statistics
    Simulate,
    /// Exact moments from the recursion, or the exact (S_n, Z_n) law
    Exact {
        /// Emit the full joint distribution at the final time instead of moments
        #[arg(long)]
        distribution: bool,
    },
    /// Run a gated experiment
    Experiment {
        #[arg(value_parser = parse_kind)]
        kind: ExperimentKind,
    },
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse().map_err(|e: erw_core::Error| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format '{s}' (expected csv or json)")),
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct Options {
    /// Repeat probability
    #[arg(short = 'p', long, global = true, allow_negative_numbers = true)]
    pub p: Option<f64>,
    /// Flip probability
    #[arg(short = 'q', long, global = true, allow_negative_numbers = true)]
    pub q: Option<f64>,
    /// Delay probability (default 1 - p - q)
    #[arg(short = 'r', long, global = true, allow_negative_numbers = true)]
    pub r: Option<f64>,
    /// Memory parameter
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    /// Number of steps n
    #[arg(long, global = true)]
    pub steps: Option<u64>,
    /// Number of trajectories
    #[arg(long, global = true)]
    pub trajectories: Option<u64>,
    /// Master seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Snapshot times, comma-separated (default: dyadic grid)
    #[arg(long, global = true, value_delimiter = ',')]
    pub snapshots: Option<Vec<u64>>,
    /// Output file (default: stdout)
    #[arg(short = 'o', long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Also write an SVG plot
    #[arg(long, global = true)]
    pub plot: bool,
    /// Worker threads (0: all cores)
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Raw values kept per snapshot for KS tests
    #[arg(long, global = true)]
    pub reservoir: Option<u64>,
    /// Ratio between the W proxy horizon and the residual time
    #[arg(long, global = true)]
    pub horizon: Option<u64>,
    /// key = value config file; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub params: ModelParams,
    pub n_steps: u64,
    pub n_traj: u64,
    pub master_seed: u64,
    pub snapshots: Option<Vec<u64>>,
    pub output_path: Option<PathBuf>,
    pub format: Format,
    pub plot: bool,
    pub workers: usize,
    pub reservoir_k: u64,
    pub horizon_factor: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Predict,
    Simulate,
    Exact { distribution: bool },
    Experiment(ExperimentKind),
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Predict => "predict",
            CommandKind::Simulate => "simulate",
            CommandKind::Exact { .. } => "exact",
            CommandKind::Experiment(k) => k.name(),
        }
    }

    /// `(n_steps, n_traj)` defaults.
    fn default_sizes(&self) -> (u64, u64) {
        match self {
            CommandKind::Predict => (1_000_000, 0),
            CommandKind::Simulate => (10_000, 1_000),
            CommandKind::Exact {
                distribution: false,
            } => (100_000, 0),
            CommandKind::Exact { distribution: true } => (100, 0),
            CommandKind::Experiment(k) => k.default_sizes(),
        }
    }
}

impl RunConfig {
    pub fn experiment_inputs(&self, kind: ExperimentKind) -> ExperimentInputs {
        ExperimentInputs {
            kind,
            params: self.params,
            n_steps: self.n_steps,
            n_traj: self.n_traj,
            master_seed: self.master_seed,
            reservoir_k: self.reservoir_k,
            horizon_factor: self.horizon_factor,
        }
    }
}

/// Parses a `key = value` config file.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    const KEYS: [&str; 14] = [
        "p",
        "q",
        "r",
        "theta",
        "steps",
        "trajectories",
        "seed",
        "snapshots",
        "output",
        "format",
        "plot",
        "workers",
        "reservoir",
        "horizon",
    ];
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("config line {}: expected key = value", i + 1))
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(CliError::Usage(format!(
                "config line {}: unknown key '{key}'",
                i + 1
            )));
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

fn file_value<T: FromStr>(file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    file.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|e| CliError::Usage(format!("config key '{key}': {e}")))
        })
        .transpose()
}

fn file_list(file: &BTreeMap<String, String>, key: &str) -> Result<Option<Vec<u64>>, CliError> {
    file.get(key)
        .map(|v| {
            v.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<u64>()
                        .map_err(|e| CliError::Usage(format!("config key '{key}': {e}")))
                })
                .collect()
        })
        .transpose()
}

pub fn resolve(cli: Cli) -> Result<RunConfig, CliError> {
    let command = match cli.command {
        Command::Predict => CommandKind::Predict,
        Command::Simulate => CommandKind::Simulate,
        Command::Exact { distribution } => CommandKind::Exact { distribution },
        Command::Experiment { kind } => CommandKind::Experiment(kind),
    };
    let file = match &cli.opts.config {
        Some(path) => load_config(path)?,
        None => BTreeMap::new(),
    };
    resolve_with(command, cli.opts, &file)
}

fn load_config(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_file(&text)
}

pub fn resolve_with(
    command: CommandKind,
    o: Options,
    file: &BTreeMap<String, String>,
) -> Result<RunConfig, CliError> {
    let required = |flag: Option<f64>, key: &str| -> Result<f64, CliError> {
        match flag {
            Some(v) => Ok(v),
            None => file_value(file, key)?
                .ok_or_else(|| CliError::Usage(format!("missing parameter '{key}'"))),
        }
    };
    let p = required(o.p, "p")?;
    let q = required(o.q, "q")?;
    let theta = required(o.theta, "theta")?;
    let r = match o.r {
        Some(r) => Some(r),
        None => file_value::<f64>(file, "r")?,
    };
    let params = match r {
        Some(r) => ModelParams::new(p, q, r, theta)?,
        None => ModelParams::with_delay_remainder(p, q, theta)?,
    };

    let (default_steps, default_traj) = command.default_sizes();
    let n_steps = o
        .steps
        .or(file_value(file, "steps")?)
        .unwrap_or(default_steps);
    let n_traj = o
        .trajectories
        .or(file_value(file, "trajectories")?)
        .unwrap_or(default_traj);
    let master_seed = o
        .seed
        .or(file_value(file, "seed")?)
        .unwrap_or(erw_core::experiment::DEFAULT_SEED);
    let snapshots = match o.snapshots {
        Some(s) => Some(s),
        None => file_list(file, "snapshots")?,
    };
    let output_path = o.output.or(file_value::<PathBuf>(file, "output")?);
    let format = o
        .format
        .or(file_value(file, "format")?)
        .unwrap_or(Format::Csv);
    let plot = o.plot || file_value::<bool>(file, "plot")?.unwrap_or(false);
    let workers = o.workers.or(file_value(file, "workers")?).unwrap_or(0);
    let reservoir_k = o
        .reservoir
        .or(file_value(file, "reservoir")?)
        .unwrap_or(erw_core::montecarlo::DEFAULT_RESERVOIR as u64);
    let horizon_factor = o
        .horizon
        .or(file_value(file, "horizon")?)
        .unwrap_or(erw_core::montecarlo::DEFAULT_HORIZON_FACTOR);

    if n_steps == 0 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    if let CommandKind::Exact { distribution: true } = command {
        if n_steps > erw_core::oracle::DEFAULT_DP_CAP {
            return Err(erw_core::Error::CapExceeded {
                n: n_steps,
                cap: erw_core::oracle::DEFAULT_DP_CAP,
            }
            .into());
        }
    }
    Ok(RunConfig {
        command,
        params,
        n_steps,
        n_traj,
        master_seed,
        snapshots,
        output_path,
        format,
        plot,
        workers,
        reservoir_k,
        horizon_factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> Options {
        Options {
            p: Some(0.6),
            q: Some(0.2),
            theta: Some(0.5),
            ..Options::default()
        }
    }

    #[test]
    fn delay_defaults_to_remainder() {
        let c = resolve_with(CommandKind::Predict, opts(), &BTreeMap::new()).unwrap();
        assert!((c.params.r() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = parse_config_file("steps = 500\nseed = 9 # comment\n\nformat = json\n").unwrap();
        let mut o = opts();
        o.seed = Some(3);
        let c = resolve_with(CommandKind::Simulate, o, &file).unwrap();
        assert_eq!(c.n_steps, 500);
        assert_eq!(c.master_seed, 3);
        assert_eq!(c.format, Format::Json);
        assert_eq!(c.n_traj, 1_000);
    }

    #[test]
    fn file_supplies_parameters() {
        let file =
            parse_config_file("p=0.6\nq=0.2\nr=0.2\ntheta=0.5\nsnapshots=10, 20,40").unwrap();
        let c = resolve_with(CommandKind::Simulate, Options::default(), &file).unwrap();
        assert_eq!(c.snapshots, Some(vec![10, 20, 40]));
        assert!((c.params.theta() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bad_config_lines() {
        assert!(parse_config_file("nonsense").is_err());
        assert!(parse_config_file("colour = red").is_err());
        let file = parse_config_file("steps = many").unwrap();
        assert!(resolve_with(CommandKind::Simulate, opts(), &file).is_err());
    }

    #[test]
    fn distribution_respects_cap() {
        let mut o = opts();
        o.steps = Some(401);
        let err = resolve_with(
            CommandKind::Exact { distribution: true },
            o,
            &BTreeMap::new(),
        );
        assert!(matches!(
            err,
            Err(CliError::Core(erw_core::Error::CapExceeded { .. }))
        ));
    }

    #[test]
    fn missing_parameter_is_usage_error() {
        let mut o = opts();
        o.theta = None;
        assert!(matches!(
            resolve_with(CommandKind::Predict, o, &BTreeMap::new()),
            Err(CliError::Usage(_))
        ));
    }
}
