//! Campaign orchestration behind the `metamorph` binary.
//!
//! Subcommands:
//! - `attack` evolves a distortion program per dataset image and exports
//!   the adversarial set with a JSON-lines manifest
//! - `evaluate` scores an oracle on a dataset, one CSV row per image
//! - `stats` compares per-image IoU tables (Wilcoxon, Cohen's d)
//! - `replay` re-applies a manifest and reports drift
//! - `gen-config` writes default config files
//! - `synth` writes a synthetic corpus
//! - `serve-oracle` serves the built-in palette model over the wire protocol

pub mod campaign;
pub mod cli;
pub mod config;
pub mod evaluate;
pub mod replay;

use std::path::{Path, PathBuf};

use metamorph_core::dataset::DatasetError;
use metamorph_core::kv::KvError;
use metamorph_core::oracle::OracleError;
use metamorph_core::stats::StatsError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
/// Some entries failed, or replay found drift.
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A runtime failure confined to one entry or one step.
    #[error("{0}")]
    Failed(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl From<KvError> for CliError {
    fn from(e: KvError) -> Self {
        CliError::Config(e.to_string())
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub use cli::run;
