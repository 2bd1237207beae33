//! Shared plumbing for the command-line tools: exit codes and error
//! classification.

use std::process::ExitCode;

pub const EXIT_INPUT: u8 = 2;
/// EX_SOFTWARE from sysexits.h.
pub const EXIT_INTERNAL: u8 = 70;

/// A failure tagged with the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    pub fn input(e: impl Into<anyhow::Error>) -> Self {
        Failure::Input(e.into())
    }

    pub fn internal(e: impl Into<anyhow::Error>) -> Self {
        Failure::Internal(e.into())
    }

    pub fn exit(self) -> ExitCode {
        match self {
            Failure::Input(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_INPUT)
            }
            Failure::Internal(e) => {
                eprintln!("internal error: {e:#}");
                ExitCode::from(EXIT_INTERNAL)
            }
        }
    }
}

impl From<rnn_asr::pipeline::PipelineError> for Failure {
    fn from(e: rnn_asr::pipeline::PipelineError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.into())
        } else {
            Failure::Internal(e.into())
        }
    }
}

pub trait InputContext<T> {
    /// Marks an error as caused by user input, with context.
    fn input_err(self, what: impl FnOnce() -> String) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> InputContext<T> for Result<T, E> {
    fn input_err(self, what: impl FnOnce() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into().context(what())))
    }
}

pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into());
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

pub fn run_main(f: impl FnOnce() -> Result<(), Failure>) -> ExitCode {
    init_logging();
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => e.exit(),
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
