use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid distance {0}: must be finite and > 0")]
    InvalidDistance(f64),

    #[error("invalid distance bands: {0}")]
    InvalidBands(String),

    #[error("invalid label set: {0}")]
    InvalidLabels(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("label `{0}` is not part of the matrix label space")]
    LabelNotInSpace(String),

    #[error("column `{0}` of the confusion matrix is empty (zero observations)")]
    ZeroColumn(String),

    #[error("confusion matrices do not share a label space")]
    LabelMismatch,

    #[error("shape mismatch: expected {expected} entries, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("invalid bounding box ({0}, {1}, {2}, {3})")]
    InvalidBox(f64, f64, f64, f64),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("confusion matrix mode {found} does not match scenario mode {expected}")]
    ModeMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("state space exceeds the bound of {0} states")]
    StateSpaceBlowup(usize),

    #[error("row {state} is not stochastic: outgoing mass {sum}")]
    NotStochastic { state: usize, sum: f64 },

    #[error("state index {0} out of range")]
    StateOutOfRange(usize),

    #[error("linear system is singular (residual {residual})")]
    Singular { residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
