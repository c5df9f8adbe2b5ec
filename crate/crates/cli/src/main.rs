mod args;
mod commands;
mod table;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or environment; exit 1.
    Usage(String),
    /// Unreadable or invalid input data; exit 2.
    Data(anyhow::Error),
    /// Fusion did not converge; exit 3.
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.into())
            }
        }
    )*};
}

data_error!(
    anyhow::Error,
    std::io::Error,
    partfuse::embedding::EmbeddingError,
    partfuse::embedding::ProviderError,
    partfuse::fusion::FusionError,
    partfuse::landmarks::GeometryError,
    partfuse::metrics::MetricsError,
    partfuse::protocol::ProtocolError,
    partfuse::synth::SynthError
);

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("PARTFUSE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("PARTFUSE_THREADS must be a non-negative integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Crop(a) => commands::crop(a),
        Command::Import(a) => commands::import(a),
        Command::Score(a) => commands::score(a),
        Command::FuseTrain(a) => commands::fuse_train(a),
        Command::FuseApply(a) => commands::fuse_apply(a),
        Command::Eval(a) => commands::eval(a),
        Command::Protocol(a) => commands::protocol(a),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}\n\nFor more information, try '--help'."),
                CliError::Data(err) => eprintln!("error: {err:#}"),
                CliError::Numerical(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(e.code())
        }
    }
}
