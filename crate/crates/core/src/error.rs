use std::fmt;

/// Errors raised anywhere in the core crate.
///
/// Variants carry enough context (op name, shapes, indices, byte offsets) for
/// the CLI to print a single machine-parsable line.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: ShapeDisplay,
        rhs: ShapeDisplay,
    },

    #[error("invalid shape {shape} for {len} values")]
    InvalidShape { shape: ShapeDisplay, len: usize },

    #[error("zero-norm row {row} in {op}")]
    ZeroNorm { op: &'static str, row: usize },

    #[error("non-finite value in {op} at coordinate {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("{op} requires a scalar, got shape {shape}")]
    NotScalar { op: &'static str, shape: ShapeDisplay },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty bag {0}")]
    EmptyBag(u32),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Formats a shape as `[a, b, ...]` inside error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeDisplay(pub Vec<usize>);

impl fmt::Display for ShapeDisplay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&[usize]> for ShapeDisplay {
    fn from(s: &[usize]) -> Self {
        ShapeDisplay(s.to_vec())
    }
}

pub(crate) fn shape_mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.into(),
        rhs: rhs.into(),
    }
}
