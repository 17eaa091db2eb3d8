use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("post {0} has an empty engagement history")]
    EmptyHistory(String),

    #[error("timestamp {t} is outside the signal timeline [{start}, {end}]")]
    OutOfRange { t: i64, start: i64, end: i64 },

    #[error("invalid data at line {line}: {msg}")]
    Invalid { line: usize, msg: String },

    #[error("supercritical process: branching factor {0} must be < 1")]
    Supercritical(f64),

    #[error("training diverged at epoch {epoch}: loss is {loss} (intensity clamp frequency {clamp_freq:.4})")]
    Diverged {
        epoch: usize,
        loss: f64,
        clamp_freq: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
