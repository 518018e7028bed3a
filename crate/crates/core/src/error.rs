use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("shape mismatch at node {node} ({op}): {detail}")]
    NodeShape {
        node: usize,
        op: &'static str,
        detail: String,
    },

    #[error("backward called on node {node}, but the tape only holds {len} forward nodes")]
    BackwardBeforeForward { node: usize, len: usize },

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rejection sampler gave up: {0}")]
    Sampler(String),

    #[error("training diverged at epoch {epoch}, batch {batch} (lr {lr:e}): loss is {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        lr: f64,
        loss: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
