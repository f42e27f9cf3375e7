//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up. `where_` carries the failing
    /// operation and, for network errors, the (block, module, branch) path.
    #[error("shape mismatch in {where_}: {detail}")]
    Shape { where_: String, detail: String },

    /// A precondition on an argument was violated (even filter size,
    /// non-positive std, rate outside (0,1), ...).
    #[error("invalid argument to {op}: {detail}")]
    InvalidArg { op: &'static str, detail: String },

    /// Bad or inconsistent configuration (specs, presets, train settings).
    #[error("config error: {0}")]
    Config(String),

    /// A data file failed to parse; `offset` is the byte position of the
    /// problem in the named file.
    #[error("{}: parse error at byte {offset}: {what}", path.display())]
    Parse {
        path: PathBuf,
        offset: u64,
        what: String,
    },

    /// Dataset-level problem that is not a byte-level parse failure.
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    /// Training diverged: the loss became non-finite.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// A parameter gradient became non-finite during an optimizer step.
    #[error("non-finite gradient in {param}")]
    NonFiniteGrad { param: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn shape(where_: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            where_: where_.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArg {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
