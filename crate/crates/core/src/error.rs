use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {value} at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str, value: f64 },

    #[error("graph state: {0}")]
    State(String),

    #[error("capability: {0}")]
    Capability(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain: {0}")]
    Domain(String),

    #[error("contract: {0}")]
    Contract(String),

    #[error("solver: {0}")]
    Solver(String),

    #[error("covariance factorization failed ({nodes} nodes, jitter {jitter:e}): {detail}; increase jitter")]
    Factorization { nodes: usize, jitter: f64, detail: String },

    #[error("corrupt data in {path}: {detail}")]
    Corruption { path: PathBuf, detail: String },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("incompatible artifacts: {0}")]
    Incompatible(String),

    #[error("training diverged at step {step}: total loss {loss:e}")]
    Divergence { step: usize, loss: f64 },

    #[error("non-finite gradient at step {step} in segment {segment}")]
    NonFiniteGradient { step: usize, segment: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
