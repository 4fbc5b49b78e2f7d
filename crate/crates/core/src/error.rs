use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the crate.
///
/// The variants map one-to-one onto the error kinds carried over the wire by
/// the trial service (see [`Error::kind`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("enrollment rejected: {0}")]
    EnrollmentRejected(String),
    #[error("sequencing error: {0}")]
    Sequencing(String),
    #[error("phase error: {0}")]
    Phase(String),
    #[error("idempotency error: {0}")]
    Idempotency(String),
    #[error("timing rejected: {0}")]
    Timing(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("log corrupted: {0}")]
    Corrupt(String),
    #[error("service returned {status} ({kind}): {message}")]
    Service {
        status: u16,
        kind: String,
        message: String,
    },
    #[error("session {session_id}: {source}")]
    InSession {
        session_id: String,
        #[source]
        source: Box<Error>,
    },
    #[error("http transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Stable snake_case identifier of the error kind.
    pub fn kind(&self) -> &str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::EnrollmentRejected(_) => "enrollment_rejected",
            Error::Sequencing(_) => "sequencing",
            Error::Phase(_) => "phase",
            Error::Idempotency(_) => "idempotency",
            Error::Timing(_) => "timing",
            Error::NotFound(_) => "not_found",
            Error::UndefinedStatistic(_) => "undefined_statistic",
            Error::Config(_) => "config",
            Error::Corrupt(_) => "corrupt",
            Error::Service { kind, .. } => kind,
            Error::InSession { source, .. } => source.kind(),
            Error::Transport(_) => "transport",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

impl Error {
    pub fn in_session(self, session_id: impl Into<String>) -> Self {
        Error::InSession {
            session_id: session_id.into(),
            source: Box::new(self),
        }
    }
}

impl From<reqwest::Error> for Error {
    fn from(e: reqwest::Error) -> Self {
        Error::Transport(e.to_string())
    }
}
