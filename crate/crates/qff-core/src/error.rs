use thiserror::Error;

/// Errors raised by encoders, the tape engine, training tasks, and I/O.
#[derive(Debug, Error)]
pub enum QffError {
    /// A non-finite or otherwise unusable value was passed to an operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration is self-inconsistent or violates a documented bound.
    #[error("configuration error: {0}")]
    Config(String),

    /// Operand shapes do not line up; both shapes are reported.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An API contract was violated (e.g. backward on a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file is not in the expected format.
    #[error("format error: {0}")]
    Format(String),

    /// A file has the right format markers but inconsistent contents.
    #[error("corrupt data: {0}")]
    Corruption(String),

    /// Training produced a non-finite loss and was aborted.
    #[error("numerical abort at step {step}: non-finite loss (lr {lr:e}, max |grad| {max_grad:e})")]
    NumericalAbort { step: u64, lr: f64, max_grad: f64 },
}

pub type Result<T> = std::result::Result<T, QffError>;

impl QffError {
    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        QffError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Wrap an I/O error with the path it concerns.
    pub fn io_at(path: &std::path::Path, err: std::io::Error) -> Self {
        QffError::Io(std::io::Error::new(
            err.kind(),
            format!("{}: {err}", path.display()),
        ))
    }
}
