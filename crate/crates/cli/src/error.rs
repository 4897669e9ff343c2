use std::io;
use std::path::{Path, PathBuf};

use densefuse_core::{ConfigError, MetricsError, PipelineError};
use densefuse_synth::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{message}")]
    Usage { message: String },
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: parse error at byte {offset}: {message}", file.display())]
    Parse {
        file: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("{}: {message}", file.display())]
    InvalidData { file: PathBuf, message: String },
    #[error("{}: {source}", file.display())]
    Config { file: PathBuf, source: ConfigError },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage {
            message: message.into(),
        }
    }

    pub fn parse(file: &Path, offset: usize, message: impl Into<String>) -> Self {
        CliError::Parse {
            file: file.to_path_buf(),
            offset,
            message: message.into(),
        }
    }

    pub fn invalid(file: &Path, message: impl Into<String>) -> Self {
        CliError::InvalidData {
            file: file.to_path_buf(),
            message: message.into(),
        }
    }

    /// Wraps an I/O error; a missing file becomes [`CliError::MissingFile`].
    pub fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            CliError::MissingFile(path.to_path_buf())
        } else {
            CliError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    /// Process exit code: 1 usage, 2 data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage { .. } => 1,
            CliError::MissingFile(_)
            | CliError::Io { .. }
            | CliError::Parse { .. }
            | CliError::InvalidData { .. }
            | CliError::Config { .. }
            | CliError::Synth(_) => 2,
            CliError::Pipeline(e) => match e {
                PipelineError::NoKeyframes
                | PipelineError::InvalidKeyframe { .. }
                | PipelineError::Config(_) => 2,
                _ => 3,
            },
            CliError::Metrics(e) => match e {
                MetricsError::DimensionMismatch(..) => 2,
                _ => 3,
            },
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String, CliError> {
    let bytes = read_file(path)?;
    String::from_utf8(bytes).map_err(|e| {
        let offset = e.utf8_error().valid_up_to();
        CliError::parse(path, offset, "invalid UTF-8")
    })
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}
