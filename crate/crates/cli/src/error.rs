use thiserror::Error;

/// Failure classes with a fixed exit code each.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{0}")]
    Numeric(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    /// Replay found outputs that differ from the stored ones.
    #[error("{0}")]
    Drift(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn schema(path: impl Into<String>, message: impl std::fmt::Display) -> Self {
        CliError::Schema {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn io(path: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_string(),
            message: err.to_string(),
        }
    }

    pub fn code(&self) -> i32 {
        match self {
            CliError::Drift(_) => 1,
            CliError::Schema { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Drift(_) => "drift",
            CliError::Schema { .. } => "schema",
            CliError::Numeric(_) => "numeric",
            CliError::Io { .. } => "io",
        }
    }

    /// One JSON object on one line.
    pub fn to_line(&self) -> String {
        let mut v = serde_json::json!({
            "error": self.kind(),
            "code": self.code(),
            "message": self.to_string(),
        });
        match self {
            CliError::Schema { path, message } | CliError::Io { path, message } => {
                v["path"] = path.clone().into();
                v["message"] = message.clone().into();
            }
            _ => {}
        }
        v.to_string()
    }
}

/// Library errors: bad values are schema errors, file and parse problems
/// are I/O, everything else is numeric.
impl From<esrsim::Error> for CliError {
    fn from(e: esrsim::Error) -> Self {
        use esrsim::Error as E;
        match e {
            E::InvalidInput(m) => CliError::schema("params", m),
            E::Json(err) => CliError::schema("params", err),
            E::Io(err) => CliError::io("-", err),
            E::Csv(err) => CliError::io("-", err),
            E::Format(m) => CliError::io("-", m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}
