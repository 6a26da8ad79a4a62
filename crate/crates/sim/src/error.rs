use thiserror::Error;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SimError {
    /// Syntax or schema problem, tagged with `file:line:column` when known.
    #[error("{location}: {message}")]
    Parse { location: String, message: String },
    /// Semantically invalid value, tagged with the key path.
    #[error("{location}: {message}")]
    Invalid { location: String, message: String },
    #[error("unknown scenario `{0}` (not a file and not a bundled name)")]
    UnknownScenario(String),
    #[error("bad override {0}")]
    BadOverride(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] acc_core::Error),
}

impl SimError {
    pub(crate) fn invalid(location: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Invalid {
            location: location.into(),
            message: message.into(),
        }
    }
}
