//! The `biasbench` command line: runs the synth, train, attribute, evaluate
//! and report stages over one JSON run configuration.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod tables;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad invocation or configuration.
    #[error("{0:#}")]
    Usage(anyhow::Error),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}
