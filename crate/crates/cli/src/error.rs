use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Stats(String),
    #[error("{0}")]
    Bench(String),
    #[error("{0}")]
    Report(String),
    #[error(transparent)]
    Core(#[from] fdcnn::Error),
    #[error(transparent)]
    Data(#[from] fdcnn_data::DataError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl CliError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Stats(_) => "stats",
            CliError::Bench(_) => "bench",
            CliError::Report(_) => "report",
            CliError::Core(_) => "model",
            CliError::Data(_) => "data",
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Format { path: path.into(), message: message.to_string() }
    }

    /// One JSON object on one line.
    pub fn to_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string().replace('\n', " ") }).to_string()
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
