//! Error type shared across the crate.

/// Errors reported by dictionary construction, operators and solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A size, stride or count parameter is out of range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two objects that must share a layer geometry do not.
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    /// A spatial position or atom index is out of range.
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    /// Materializing a dense matrix would exceed the entry cap.
    #[error("dense matrix of {rows}x{cols} entries exceeds cap {cap}")]
    DenseCapExceeded { rows: usize, cols: usize, cap: usize },

    /// Coherence is undefined for a dictionary with fewer than two atoms.
    #[error("mutual coherence requires at least two atoms")]
    SingleAtom,

    /// Power iteration did not reach the requested tolerance.
    #[error("power iteration did not converge after {iters} iterations (last estimate {last:.6e})")]
    PowerIterationDiverged { iters: usize, last: f64 },

    /// A least-squares support is numerically rank deficient.
    #[error("rank-deficient support (condition estimate {cond:.3e})")]
    RankDeficient { cond: f64 },

    /// A solver produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A text file did not match the expected format.
    #[error("parse error: {0}")]
    Parse(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
