use thiserror::Error;

pub type Result<T, E = SeaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SeaError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("node index out of range: {index} >= {num_nodes}")]
    NodeOutOfRange { index: usize, num_nodes: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dataset/task mismatch: {0}")]
    TaskMismatch(String),

    #[error("eigensolver did not converge, off-diagonal residual {residual:e}")]
    NoConvergence { residual: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("roc-auc needs both classes, got only label {0}")]
    SingleClass(u8),

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SeaError {
    /// Short stable identifier, used in machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            SeaError::ShapeMismatch { .. } => "shape_mismatch",
            SeaError::NonFinite { .. } => "non_finite",
            SeaError::NonScalarLoss(_) => "non_scalar_loss",
            SeaError::Parse { .. } => "parse",
            SeaError::NodeOutOfRange { .. } => "node_out_of_range",
            SeaError::InvalidGraph(_) => "invalid_graph",
            SeaError::Config(_) => "config",
            SeaError::TaskMismatch(_) => "task_mismatch",
            SeaError::NoConvergence { .. } => "no_convergence",
            SeaError::EmptyDataset => "empty_dataset",
            SeaError::SingleClass(_) => "single_class",
            SeaError::NonFiniteLoss { .. } => "non_finite_loss",
            SeaError::Checkpoint(_) => "checkpoint",
            SeaError::Io(_) => "io",
            SeaError::Json(_) => "json",
        }
    }
}
