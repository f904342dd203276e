//! Crate-wide error type.
//!
//! Everything user-triggerable (bad shapes, bad config, degenerate random
//! draws, missing worker results) is an `Error`; internal logic bugs panic.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An argument is out of its documented domain (zero dims, negative
    /// variance, tolerance <= 0, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Repeated random draws failed to produce a usable coefficient matrix
    /// (condition number too large or a noise column below the norm floor).
    #[error("degenerate coding scheme: no acceptable draw after {attempts} attempts")]
    DegenerateScheme { attempts: usize },

    /// A decode was attempted without a complete set of worker results.
    #[error("incomplete batch: missing result for encoding {index}")]
    IncompleteBatch { index: usize },

    /// Integrity verification was requested on a scheme generated with E = 0.
    #[error("integrity checking not enabled: scheme was generated without extension columns")]
    IntegrityNotEnabled,

    /// The gradient cross-check needs a dual decoding pair, which only
    /// exists for single-input virtual batches (see `CodingScheme::verify_grad`).
    #[error("gradient cross-check unavailable: dual decoding vectors exist only for K = 1 schemes")]
    GradCheckUnavailable,

    /// Fewer workers than encodings to dispatch.
    #[error("not enough workers: need {need}, have {have}")]
    InsufficientWorkers { need: usize, have: usize },

    /// A worker was handed a job for a weight version it does not hold.
    #[error("stale weights: worker {worker} holds version {held}, job wants {wanted}")]
    StaleWeights { worker: usize, held: u64, wanted: u64 },

    /// Training produced a non-finite loss; the run is aborted rather than
    /// silently continuing with NaN weights.
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    /// An integrity verdict failed and the configured policy is to abort.
    #[error("integrity failure: {0}")]
    IntegrityAbort(String),

    /// Malformed dataset file (CSV or IDX).
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Malformed or inconsistent run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
