//! Crate-wide error type and result alias.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A record in an input stream could not be parsed or validated.
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    /// Bad configuration: unknown format, missing dictionary, invalid range.
    #[error("configuration error: {0}")]
    Config(String),

    /// A stated operation precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Transport-level provider failure; safe to retry.
    #[error("provider transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },

    /// Structured extraction produced an irreparably invalid document.
    #[error("extraction error: {0}")]
    Extraction(String),

    /// Scale assessment returned a non-numeric or missing item response.
    #[error("assessment error for item '{item}': {message}")]
    Assessment { item: String, message: String },

    /// Subscale scoring failed (missing item scores, unknown dimension).
    #[error("scoring error: {0}")]
    Scoring(String),

    /// A statistical estimate is not computable from the given data.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// Two artifacts that must be aligned (by post, by dimension) are not.
    #[error("pairing error: {0}")]
    Pairing(String),

    /// The regression design matrix is singular or a level is empty.
    #[error("design error: {0}")]
    Design(String),

    /// A distribution function was called outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
