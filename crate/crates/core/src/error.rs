use std::io;

use thiserror::Error;

/// Errors raised by the library.
///
/// The variants map onto the exit-code classes of the command-line tool:
/// `Domain`/`Precondition` are caller mistakes with respect to a mathematical
/// contract, `Dimension` is a shape mismatch and `Parse`/`Io` are data errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("parse error in field `{field}`: {message}")]
    Parse { field: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn parse(field: &'static str, msg: impl Into<String>) -> Self {
        Error::Parse {
            field,
            message: msg.into(),
        }
    }

    pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::Dimension {
                context,
                expected,
                found,
            })
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
