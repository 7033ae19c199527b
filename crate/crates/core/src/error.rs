use std::path::PathBuf;

use crate::mesh::FaceId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("inverted element: jacobian {jacobian:e} at node {node} ({location})")]
    InvertedElement {
        node: usize,
        location: &'static str,
        jacobian: f64,
    },

    #[error("mesh parse error at line {line}: {message}")]
    MeshParse { line: usize, message: String },

    #[error("mesh validation failed for face {face}: {message}")]
    MeshValidation { face: FaceId, message: String },

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("interface projection {m} <- {n} violates inner-product preservation (residual {residual:e})")]
    IppViolation { m: FaceId, n: FaceId, residual: f64 },

    #[error("non-finite state at step {step} (t = {time})")]
    NonFinite { step: usize, time: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
