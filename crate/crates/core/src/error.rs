use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = BakrError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BakrError {
    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("kernel family {0} is not supported by this operation")]
    WrongFamily(String),

    #[error("invalid kernel matrix: {0}")]
    InvalidKernel(String),

    #[error("kernel matrix is singular after eigenvalue flooring ({0} eigenvalues below floor)")]
    SingularKernel(usize),

    #[error("sampler setup failed: {0}")]
    SamplerSetup(String),

    #[error("sampler diverged at iteration {iteration}: {what} is not finite")]
    Divergence { iteration: usize, what: &'static str },

    #[error("posterior chain has no retained draws")]
    EmptyChain,

    #[error("all pooled effect magnitudes are zero; cannot derive a threshold")]
    ZeroScale,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: row {row}, column {col}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl BakrError {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        BakrError::Shape {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BakrError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than by inputs or usage.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            BakrError::SingularKernel(_)
                | BakrError::Divergence { .. }
                | BakrError::InvalidKernel(_)
                | BakrError::ZeroScale
        )
    }

    /// True for failures caused by malformed or unreadable input data.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            BakrError::Parse { .. }
                | BakrError::Data { .. }
                | BakrError::Io { .. }
                | BakrError::Json(_)
                | BakrError::Csv(_)
                | BakrError::Shape { .. }
        )
    }
}
