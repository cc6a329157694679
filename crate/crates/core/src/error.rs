use alloc::string::String;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("joint {0} has no incident edge")]
    IsolatedJoint(usize),
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("self-loop on joint {0}")]
    SelfLoop(usize),
    #[error("edge list is empty")]
    EmptyEdgeList,
    #[error("scaling s = {0} is outside the allowed range")]
    ScalingOutOfRange(f64),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("spectral response is singular at lambda = {0}")]
    SingularFrequency(f64),
    #[error("non-finite input value {0}")]
    NonFiniteInput(f64),
    #[error("bad dimensions: {0}")]
    BadDimensions(String),
    #[error("cache does not match the layer or upstream gradient: {0}")]
    StaleCache(String),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("bad image dimensions {width}x{height}")]
    BadImageDims { width: f64, height: f64 },
    #[error("dataset has no ground truth")]
    MissingGroundTruth,
    #[error("degenerate configuration in sample {0}")]
    DegenerateConfiguration(usize),
    #[error("joint count mismatch: expected {expected}, got {actual}")]
    JointCountMismatch { expected: usize, actual: usize },
    #[error("non-finite value in sample {sample}")]
    NonFiniteValue { sample: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(expected: (usize, usize), actual: (usize, usize)) -> Error {
    Error::ShapeMismatch { expected: alloc::format!("{}x{}", expected.0, expected.1), actual: alloc::format!("{}x{}", actual.0, actual.1) }
}
