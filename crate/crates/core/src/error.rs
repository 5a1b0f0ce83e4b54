use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A model response that does not follow the expected format.
    #[error("could not parse {what} response: {message}")]
    Parse {
        what: &'static str,
        message: String,
        raw: String,
    },

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("backend returned status {status}: {body}")]
    Backend { status: u16, body: String },

    #[error("unsupported by backend: {0}")]
    Unsupported(String),

    #[error("mock backend has no scripted response for stage `{stage}`")]
    Unscripted { stage: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("pipeline: {0}")]
    Pipeline(String),
}

impl Error {
    pub(crate) fn parse(what: &'static str, message: impl Into<String>, raw: &str) -> Self {
        Error::Parse {
            what,
            message: message.into(),
            raw: raw.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidRecord(_) => "invalid_record",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Parse { .. } => "parse",
            Error::Transport { .. } => "transport",
            Error::Backend { .. } => "backend",
            Error::Unsupported(_) => "unsupported",
            Error::Unscripted { .. } => "unscripted",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Config(_) => "config",
            Error::Pipeline(_) => "pipeline",
        }
    }

    /// Whether a failed backend call is worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            Error::Transport { .. } => true,
            Error::Backend { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}
