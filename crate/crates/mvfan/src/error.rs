use std::path::PathBuf;

/// Errors raised by the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed binary content.
    #[error("{path}: format error at byte {offset}: {detail}")]
    Format { path: PathBuf, offset: u64, detail: String },
    /// Malformed text content.
    #[error("{path}:{line}: {detail}")]
    Parse { path: PathBuf, line: usize, detail: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown split `{requested}` (available: {})", available.join(", "))]
    Split { requested: String, available: Vec<String> },
    #[error("non-finite loss at step {step} (frames: {})", frame_ids.join(", "))]
    Divergence { step: usize, frame_ids: Vec<String> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] mvfan_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable, machine-readable category reported by the CLI.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } | Error::Parse { .. } => "format",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::Split { .. } => "split",
            Error::Divergence { .. } => "divergence",
            Error::Checkpoint(_) => "checkpoint",
            Error::Core(e) => match e {
                mvfan_core::Error::Validation(_) => "validation",
                mvfan_core::Error::Config(_) => "config",
                _ => "internal",
            },
        }
    }

    /// Process exit code for the category.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "io" => 3,
            "format" => 4,
            "validation" => 5,
            "config" => 6,
            "split" => 7,
            "divergence" => 8,
            "checkpoint" => 9,
            _ => 10,
        }
    }
}
