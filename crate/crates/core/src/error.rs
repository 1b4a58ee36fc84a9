use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// Variants fall in two families: usage errors (bad indices, mismatched sizes,
/// malformed files) and numerical failures (singularities, blow-up,
/// degenerate weights). [`Error::is_numerical`] tells them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("size mismatch for {what}: expected {expected}, found {found}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singularity at site {site}: {detail}")]
    Singularity { site: usize, detail: String },

    #[error("numerical instability at site {site} (species {species}): non-finite value")]
    NumericalInstability { site: usize, species: usize },

    #[error("non-finite weight at site {site} of particle {particle}")]
    NonFiniteWeight { site: usize, particle: usize },

    #[error("non-finite log-likelihood at step {step}, block {block}")]
    NonFiniteLikelihood { step: usize, block: usize },

    #[error("degenerate block {block}: every particle has zero weight")]
    DegenerateBlock { block: usize },

    #[error("failed to parse {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singularity { .. }
                | Error::NumericalInstability { .. }
                | Error::NonFiniteWeight { .. }
                | Error::NonFiniteLikelihood { .. }
                | Error::DegenerateBlock { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::SizeMismatch {
            what,
            expected,
            found,
        })
    }
}
