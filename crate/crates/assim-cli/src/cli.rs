//! Argument parsing and subcommand execution.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_config, ExperimentConfig, Format, Method};
use crate::data::write_table;
use crate::error::CliError;
use crate::run::{bench, compare, resolve_model, run_experiment, simulate_data};

#[derive(Debug, Parser)]
#[command(name = "assim", version, about = "Run data assimilation and inversion experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<String>,
    /// csv or json.
    #[arg(long)]
    pub format: Option<String>,
    /// Worker threads for `bench`.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate observations (to --out) and the truth (to --truth).
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        truth: Option<String>,
    },
    /// Run the configured method and write its report.
    Run {
        #[command(flatten)]
        common: Common,
        /// Record wall time in the summary (breaks byte-identical output).
        #[arg(long)]
        timing: bool,
    },
    /// Run several filters or smoothers on shared data.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated method names.
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<String>,
    },
    /// Error-versus-N study with a log-log slope fit.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ensemble sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let path = common.config.display().to_string();
    let text = std::fs::read_to_string(&common.config).map_err(|source| CliError::Io { path, source })?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(f) = &common.format {
        cfg.output.format = Some(f.parse::<Format>()?);
    }
    if let Some(out) = &common.out {
        cfg.output.path = Some(out.clone());
    }
    Ok(cfg)
}

fn emit(report: &crate::report::Report, cfg: &ExperimentConfig) -> Result<(), CliError> {
    report.emit(cfg.output.path.as_deref(), cfg.output.format.unwrap_or(Format::Csv))
}

fn write_csv(path: Option<&str>, prefix: &str, first: u64, values: &assim::DMatrix<f64>) -> Result<(), CliError> {
    let label = path.unwrap_or("<stdout>").to_string();
    let mut buf = Vec::new();
    write_table(&mut buf, prefix, first, values).map_err(|source| CliError::Io { path: label.clone(), source })?;
    match path {
        Some(p) => std::fs::write(p, buf),
        None => std::io::Write::write_all(&mut std::io::stdout(), &buf),
    }
    .map_err(|source| CliError::Io { path: label, source })
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common, truth } => {
            let cfg = load(&common)?;
            let model = resolve_model(&cfg)?;
            let data = simulate_data(&cfg, &model)?;
            write_csv(common.out.as_deref(), "y", 1, &data.observations)?;
            if let (Some(path), Some(t)) = (truth, &data.truth) {
                write_csv(Some(&path), "v", 0, t)?;
            }
            Ok(())
        }
        Command::Run { common, timing } => {
            let cfg = load(&common)?;
            let start = Instant::now();
            let mut report = run_experiment(&cfg)?;
            if timing {
                report.summary.insert("wall_time_s".into(), start.elapsed().as_secs_f64());
            }
            emit(&report, &cfg)
        }
        Command::Compare { common, methods } => {
            let cfg = load(&common)?;
            let methods = methods.iter().map(|m| m.parse::<Method>()).collect::<Result<Vec<_>, _>>()?;
            emit(&compare(&cfg, &methods)?, &cfg)
        }
        Command::Bench { common, ns, seeds } => {
            let cfg = load(&common)?;
            emit(&bench(&cfg, &ns, seeds, common.threads)?, &cfg)
        }
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
