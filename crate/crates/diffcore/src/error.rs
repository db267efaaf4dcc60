use thiserror::Error;

/// Errors raised while building, evaluating or differentiating a graph.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("non-finite entry in {kind} `{name}`")]
    NonFiniteInput { kind: &'static str, name: String },
    #[error("index {index} out of range (bound {bound}) at node {node} ({op})")]
    IndexOutOfRange {
        node: usize,
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("{kind} `{name}` has shape {actual:?}, graph expects {expected:?}")]
    BindingShape {
        kind: &'static str,
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("loss node {node} is not scalar (shape {shape:?})")]
    NonScalarLoss { node: usize, shape: Vec<usize> },
    #[error("evaluation does not belong to this graph ({values} values for {nodes} nodes)")]
    StaleEvaluation { values: usize, nodes: usize },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
}

pub type Result<T> = std::result::Result<T, DiffError>;
