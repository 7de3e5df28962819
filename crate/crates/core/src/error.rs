use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a mathematical precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// All aerobic cells are gone, so the VOP fraction among aerobic cells is undefined.
    #[error("aerobic-extinct: b_d + b_v = 0, the VOP fraction among aerobic cells is undefined")]
    AerobicExtinct,

    /// Malformed or inconsistent input (config values, array lengths, policies).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Problem size exceeds a solver limit.
    #[error("size error: {0}")]
    Size(String),

    /// A numerical scheme's stability condition is violated.
    #[error("stability violation: {0}")]
    Stability(String),

    /// The request falls outside the validity scope of a component.
    #[error("scope error: {0}")]
    Scope(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
