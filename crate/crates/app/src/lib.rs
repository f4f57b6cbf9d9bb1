//! Command implementations and the HTTP scoring service behind the
//! `halluguard` binary.

pub mod cli;
pub mod commands;
pub mod config;
pub mod io;
pub mod server;

use thiserror::Error;

pub use config::{load_config, AppConfig};

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Trace(#[from] halluguard::trace::TraceError),
    #[error(transparent)]
    Feature(#[from] halluguard::features::FeatureError),
    #[error(transparent)]
    Classifier(#[from] halluguard::classifier::ClassifierError),
    #[error(transparent)]
    Ingest(#[from] halluguard::ingest::IngestError),
    #[error(transparent)]
    Judge(#[from] halluguard::judge::JudgeError),
    #[error(transparent)]
    Arbitration(#[from] halluguard::arbitration::ArbitrationError),
    #[error(transparent)]
    Plan(#[from] halluguard::planner::PlanError),
    #[error(transparent)]
    Provider(#[from] halluguard::providers::ProviderError),
    #[error("{0}")]
    Domain(String),
}

impl AppError {
    /// 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;
