//! Command-line harness around ddc-core: `simulate`, `oracle`, `estimate`,
//! `montecarlo` and `taxi-prep`, each writing its artifacts and a manifest
//! into `--out`.

pub mod artifacts;
pub mod commands;
pub mod config;

use clap::{Parser, ValueEnum};

pub use config::Settings;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] ddc_core::Error),
}

impl CliError {
    /// 2 configuration, 3 data, 4 numeric or convergence.
    pub fn exit_code(&self) -> i32 {
        use ddc_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e.root() {
                E::Config(_) => 2,
                E::Parse { .. } | E::Integrity(_) | E::Validation(_) | E::Empty | E::Io(_) | E::Csv(_) => 3,
                _ => 4,
            },
        }
    }

    pub fn stage(&self) -> Option<&'static str> {
        match self {
            CliError::Core(ddc_core::Error::Stage { stage, .. }) => Some(stage),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Simulate,
    Oracle,
    Estimate,
    Montecarlo,
    TaxiPrep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Oracle => "oracle",
            Command::Estimate => "estimate",
            Command::Montecarlo => "montecarlo",
            Command::TaxiPrep => "taxi-prep",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ddc", version, about = "Semiparametric dynamic discrete choice: simulate, estimate, replicate", after_help = Settings::help())]
struct Args {
    command: Command,
    /// --key value pairs; see the key list below
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    rest: Vec<String>,
}

/// Parse and run one command. `argv` excludes the program name.
pub fn run(argv: &[String]) -> Result<(), CliError> {
    let args = Args::try_parse_from(std::iter::once("ddc".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let settings = Settings::from_args(&args.rest)?;
    run_command(args.command, &settings)
}

pub fn run_command(cmd: Command, settings: &Settings) -> Result<(), CliError> {
    let threads = settings.int("threads") as usize;
    if threads == 0 {
        return commands::dispatch(cmd, settings);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    pool.install(|| commands::dispatch(cmd, settings))
}

/// Exit status for `main`, printing the error. Help and version requests exit 0.
pub fn main_with(argv: &[String]) -> i32 {
    match Args::try_parse_from(std::iter::once("ddc".to_string()).chain(argv.iter().cloned())) {
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
        Ok(args) => {
            let result = Settings::from_args(&args.rest).and_then(|s| run_command(args.command, &s));
            match result {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("ddc {}: {e}", args.command.name());
                    e.exit_code()
                }
            }
        }
    }
}
