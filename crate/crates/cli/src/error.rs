use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },

    #[error("{0}")]
    Invalid(exocausal::Error),

    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },

    #[error("missing {}; run `exocausal {stage}` first", path.display())]
    MissingStage { path: PathBuf, stage: &'static str },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Schema { .. } => "schema",
            CliError::Invalid(_) => "config",
            CliError::Input { .. } => "input",
            CliError::MissingStage { .. } => "missing_input",
        }
    }
}

/// Category of any error reaching `main`, for the machine-readable line.
pub fn kind_of(e: &anyhow::Error) -> &'static str {
    if let Some(c) = e.downcast_ref::<CliError>() {
        return c.kind();
    }
    match e.downcast_ref::<exocausal::Error>() {
        Some(exocausal::Error::Config(_) | exocausal::Error::Supercritical(_) | exocausal::Error::Unknown { .. }) => {
            "config"
        }
        Some(exocausal::Error::Diverged { .. }) => "diverged",
        Some(exocausal::Error::Io(_)) => "io",
        Some(exocausal::Error::Invalid { .. } | exocausal::Error::Json(_) | exocausal::Error::Csv(_)) => "input",
        Some(exocausal::Error::Checkpoint(_)) => "checkpoint",
        Some(_) => "runtime",
        None if e.downcast_ref::<std::io::Error>().is_some() => "io",
        None => "runtime",
    }
}
