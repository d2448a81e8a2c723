use crate::Domain;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown modulation scheme `{0}`")]
    UnknownScheme(String),
    #[error("{scheme} needs {needed} bits, got {got}")]
    InsufficientBits {
        scheme: String,
        needed: usize,
        got: usize,
    },
    #[error("expected a {expected:?}-domain input, got {got:?}")]
    DomainMismatch { expected: Domain, got: Domain },
    #[error("signal has zero energy")]
    ZeroEnergy,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("backward requested before any forward pass was recorded")]
    BackwardBeforeForward,
    #[error("unknown architecture `{0}`")]
    UnknownArch(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) | Error::Divergence(_) | Error::ZeroEnergy => 3,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}
