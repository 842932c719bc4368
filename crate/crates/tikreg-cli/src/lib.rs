//! Command-line front end for the `tikreg` library: CSV datasets in,
//! cross-validation curves and selected models out.
//!
//! The binary is a thin wrapper over three pieces: flag parsing and
//! validation ([`config`]), dataset ingestion and result export ([`io`]),
//! and the pipeline itself ([`run`]). Everything is deterministic for a
//! fixed configuration — including the thread count — so reruns produce
//! byte-identical output files.

pub mod config;
pub mod io;
pub mod run;

use thiserror::Error;

/// Failures split by exit-code category: input files and I/O (2), numerical
/// breakdown inside the pipeline (3), configuration (4).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Config(_) => 4,
        }
    }

    pub(crate) fn numeric(e: tikreg::Error) -> Self {
        CliError::Numeric(e.to_string())
    }
}
