use thiserror::Error;

/// Errors surfaced by graph construction, numerical kernels, and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph must have at least one node")]
    EmptyGraph,
    #[error("node index {0} out of range for graph with {1} nodes")]
    NodeOutOfRange(usize, usize),
    #[error("self-loop at node {0} is not allowed")]
    SelfLoop(usize),
    #[error("node {0} is isolated (degree 0)")]
    IsolatedNode(usize),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("Householder reflection vector has near-zero norm ({0:.3e})")]
    DegenerateReflection(f64),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, Error>;
