use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the operation's domain (off-grid time, t = T, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Two paths were combined that do not share `(n, h, T, step)`.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A required capability or precondition is missing.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Invalid construction parameters.
    #[error("invalid construction: {0}")]
    Construction(String),

    /// A user callback produced an unusable value while stepping.
    #[error("evaluation failed at cell {cell}: {message}")]
    Evaluation { cell: usize, message: String },

    /// A selection policy returned a point outside the admissible set.
    #[error("selection outside the admissible set at cell {cell}: {message}")]
    SelectionOutsideSet { cell: usize, message: String },

    /// A half-ball of a characteristic complex is empty.
    #[error("empty admissible set: {0}")]
    EmptySet(String),

    /// An extrapolated limit failed its convergence test.
    #[error("limit does not converge: {0}")]
    NonConvergent(String),

    /// Exhaustive enumeration would exceed the configured cap.
    #[error("control tree has {leaves} leaves, above the cap of {cap}; use a coarser decision step")]
    Resource { leaves: u128, cap: u128 },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! domain {
    ($($arg:tt)*) => { $crate::error::Error::Domain(alloc::format!($($arg)*)) };
}
pub(crate) use domain;
