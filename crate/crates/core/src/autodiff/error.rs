use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} values but {actual} were given")]
    BadShape {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("optimizer state for `{name}` has {state} values but the parameter has {param}")]
    StateMismatch {
        name: String,
        state: usize,
        param: usize,
    },
}
