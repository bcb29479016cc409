use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised anywhere in the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch (expected {expected:?}, got {got:?})")]
    Dimension {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: degenerate output length")]
    DegenerateLength { op: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("insufficient audio: {len} samples, need at least {needed}")]
    InsufficientAudio { len: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("mask would hide every token")]
    AllMasked,
    #[error("dual mask plan has no loss positions")]
    DegeneratePlan,
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("training set must contain both classes")]
    SingleClass,
    #[error("finite-difference evaluation failed at coordinate {coord}")]
    Evaluation { coord: usize },
    #[error("non-finite {modality} loss at step {step} (l_a={l_a}, l_v={l_v})")]
    Diverged {
        step: usize,
        modality: &'static str,
        l_a: f64,
        l_v: f64,
    },
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim_err(op: &'static str, expected: &[usize], got: &[usize]) -> Error {
    Error::Dimension {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}
