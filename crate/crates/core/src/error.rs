use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("channel {index} out of range for tensor with {channels} channels")]
    ChannelOutOfRange { index: usize, channels: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid layer spec: {0}")]
    InvalidLayer(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("weight binding mismatch: {0}")]
    Binding(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("affine matrix is singular")]
    SingularMatrix,

    #[error("no valid elements to compare")]
    EmptyMask,

    #[error("dynamic range is zero but prediction error is {rmse}")]
    DegenerateRange { rmse: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
