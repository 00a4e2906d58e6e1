//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a precondition (empty cloud, bad weights, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A time parameter fell outside a motion's domain.
    #[error("t = {t} outside motion domain [{a}, {b}]")]
    Domain { t: f64, a: f64, b: f64 },

    /// A root bracket had no sign change.
    #[error("no sign change over bracket [{t0}, {t1}]")]
    Bracket { t0: f64, t1: f64 },

    /// A local fit had fewer usable points than unknowns.
    #[error("underdetermined fit: {points} points for {unknowns} unknowns")]
    Underdetermined { points: usize, unknowns: usize },

    /// Normals cancelled out; no local frame could be built.
    #[error("degenerate frame: mean normal has norm {norm:.3e}")]
    DegenerateFrame { norm: f64 },

    /// A structured text file failed to parse.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
