use std::path::PathBuf;

use mafn_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MafnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<MafnError>,
    },
}

impl MafnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MafnError::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the pipeline stage it came from.
    pub fn at(self, stage: &'static str) -> Self {
        MafnError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 for data/contract problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            MafnError::Numeric(_) => 3,
            MafnError::Tensor(TensorError::Numeric { .. }) => 3,
            MafnError::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, MafnError>;

/// Attaches a stage name to any error on the way out.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<MafnError>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.into().at(stage))
    }
}
