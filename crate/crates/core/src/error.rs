use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("weight file version {found} is not supported (expected {expected})")]
    WeightVersion { expected: u32, found: u32 },

    #[error("weight file is corrupt: {0}")]
    WeightFormat(String),

    #[error("weight file checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error(
        "weight shape mismatch at layer `{layer}`: file has {found}, config expects {expected}"
    )]
    WeightShape {
        layer: String,
        expected: String,
        found: String,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("I/O error for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        left: impl std::fmt::Debug,
        right: impl std::fmt::Debug,
    ) -> Self {
        Error::Shape {
            op,
            left: format!("{left:?}"),
            right: format!("{right:?}"),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
