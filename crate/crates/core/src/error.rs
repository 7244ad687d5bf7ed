//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error enum.
///
/// `Config`, `Parse` and `Range` are validation failures (bad inputs or
/// files); the remaining variants are runtime/numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or mismatched dimensions.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed dataset or checkpoint file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Input outside the mathematical domain of an operation
    /// (all-zero rescale input, zero-norm feature vector, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Argument outside its admissible range.
    #[error("out of range: {0}")]
    Range(String),

    /// A NaN/Inf value was produced or observed where finite values are
    /// required. `coordinate` identifies the offending entry when known.
    #[error("non-finite value{} ({context})", coordinate.map(|i| format!(" at coordinate {i}")).unwrap_or_default())]
    NonFinite {
        coordinate: Option<usize>,
        context: String,
    },

    /// Training aborted on a non-finite loss; carries the location and the
    /// loss component that went bad.
    #[error("training aborted at phase {phase}, epoch {epoch}, batch {batch}: non-finite {component} loss")]
    Training {
        phase: usize,
        epoch: usize,
        batch: usize,
        component: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by invalid user input (as opposed to runtime
    /// or numeric failures). The CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse { .. } | Error::Range(_)
        )
    }
}
