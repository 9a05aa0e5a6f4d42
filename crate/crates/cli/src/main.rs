//! `wmp`: kernel diagnostics, SBM sampling, graph classification and
//! Monte Carlo sweeps.

mod commands;
mod parse;

use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use commands::{ClassifyArgs, KernelArgs, OracleArgs, PolblogsArgs, SampleArgs, SweepArgs};

#[derive(Debug, Parser)]
#[command(
    name = "wmp",
    version,
    about = "Weighted message passing for stochastic block models"
)]
struct Cli {
    /// Worker threads for the Monte Carlo harness (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,

    /// Increase log verbosity (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print K, M, theta, lambda, SNR, the second eigenvector and equivalence sets.
    Kernel(KernelArgs),
    /// Sample an SBM graph and write it as an edge list plus labels.
    SampleSbm(SampleArgs),
    /// Classify every node of a graph with WMP.
    Classify(ClassifyArgs),
    /// Run a Monte Carlo sweep from a TOML config (gw_tree or sbm scenario).
    GwSweep(SweepArgs),
    /// Replicate the political-blogs experiment (needs polblogs.gml).
    Polblogs(PolblogsArgs),
    /// Run the BP-vs-enumeration and flow-minimality self-checks.
    OracleCheck(OracleArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Kernel(_) => "kernel",
            Self::SampleSbm(_) => "sample-sbm",
            Self::Classify(_) => "classify",
            Self::GwSweep(_) => "gw-sweep",
            Self::Polblogs(_) => "polblogs",
            Self::OracleCheck(_) => "oracle-check",
        }
    }
}

/// Failure of a subcommand: bad user input or a runtime error.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(wmp_core::Error),
}

impl From<wmp_core::Error> for CliError {
    fn from(e: wmp_core::Error) -> Self {
        match e {
            wmp_core::Error::Config(msg) => Self::Usage(msg),
            other => Self::Runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.into())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t as usize)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let name = cli.command.name();
    let result = match cli.command {
        Command::Kernel(a) => commands::kernel(a),
        Command::SampleSbm(a) => commands::sample_sbm(a),
        Command::Classify(a) => commands::classify(a),
        Command::GwSweep(a) => commands::gw_sweep(a),
        Command::Polblogs(a) => commands::polblogs(a),
        Command::OracleCheck(a) => commands::oracle_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            let mut cmd = Cli::command();
            if let Some(sub) = cmd.find_subcommand_mut(name) {
                eprintln!("\n{}", sub.render_usage());
            }
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
