use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("degenerate vector: norm {norm:e} is below 1e-12")]
    DegenerateVector { norm: f64 },

    #[error("parameter `{0}` has no gradient")]
    IncompleteGradient(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of bounds for length {len}")]
    Bounds { index: usize, len: usize },

    #[error("unknown class {0}")]
    Label(u32),

    #[error("class {0} already present in the classifier bank")]
    Conflict(u32),

    #[error("class {0} appears in more than one session")]
    Disjointness(u32),

    #[error("metric {metric} undefined: {detail}")]
    UndefinedMetric { metric: &'static str, detail: String },

    #[error("training diverged in {phase} at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged {
        phase: &'static str,
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("{phase}: {source}")]
    InPhase {
        phase: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags a runtime failure with the protocol phase it happened in.
    pub fn in_phase(phase: impl Into<String>) -> impl FnOnce(Error) -> Error {
        let phase = phase.into();
        move |e| match e {
            e @ (Error::Diverged { .. } | Error::InPhase { .. }) => e,
            e if e.is_usage() => e,
            e => Error::InPhase {
                phase,
                source: Box::new(e),
            },
        }
    }

    /// True for failures caused by bad user input rather than by a run going wrong.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Schema(_) | Error::Config(_) | Error::UndefinedMetric { .. } | Error::Json(_)
        )
    }
}
