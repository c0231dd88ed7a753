//! Command-line experiment runner: `run <config>` and `verify <config>`.
//!
//! Exit codes: 0 on completion, 1 on any error, 2 when a strict run ends
//! inconclusive.

pub mod config;
pub mod pipeline;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig, Mode};
pub use pipeline::{execute, Outcome};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Config { path: String, source: ConfigError },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] crate::Error),
}

#[derive(Debug, Parser)]
#[command(name = "rigidity", version, about = "Conditional-measure and packing-regularity experiments")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Exit with status 2 on an inconclusive verdict.
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute an experiment and write its reports.
    Run { config: PathBuf },
    /// Validate a config and print the resolved parameters.
    Verify { config: PathBuf },
}

pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::parse(&text).map_err(|source| CliError::Config { path: path.display().to_string(), source })
}

/// Text printed by `verify`.
pub fn verify_text(cfg: &ExperimentConfig) -> String {
    let mut s = String::from("OK\n");
    s.push_str(&cfg.canonical());
    s.push_str(&format!("config_hash = {}\n", cfg.hash()));
    s.push_str(&format!("estimated runtime: {:.1} s\n", cfg.estimated_seconds()));
    s
}

/// Print to stdout, ignoring a closed pipe.
fn say(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

/// Run the experiment in `cfg`; returns the exit code.
pub fn run(cfg: &ExperimentConfig, out: Option<&Path>, strict: bool) -> Result<i32, CliError> {
    let outcome = execute(cfg)?;
    let dir = out.unwrap_or(&cfg.out_dir);
    let files = report::write_reports(cfg, &outcome, dir)?;
    let mut msg = format!("verdict: {}\n", outcome.verdict_name());
    for f in files {
        msg.push_str(&format!("wrote {}\n", f.display()));
    }
    say(&msg);
    Ok(if (strict || cfg.strict) && outcome.inconclusive() { 2 } else { 0 })
}

/// Parse arguments, dispatch, and map the result to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return 1;
        }
        // Fails only if a pool already exists, in which case it is reused.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match &cli.command {
        Command::Verify { config } => load(config).map(|cfg| {
            say(&verify_text(&cfg));
            0
        }),
        Command::Run { config } => load(config).and_then(|cfg| run(&cfg, cli.out.as_deref(), cli.strict)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
