use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("PNM decode error at byte {offset}: {message}")]
    Decode { offset: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("kernel construction failed for {params}: {reason}")]
    KernelConstruction { params: String, reason: String },

    #[error("no pixels selected by mask")]
    EmptyRegion,

    #[error("ROC curve undefined: ground truth has a single class within scope")]
    UndefinedCurve,

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("image `{id}` failed: {source}")]
    Image {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset incomplete: {}", .missing.join("; "))]
    Dataset { missing: Vec<String> },
}

impl Error {
    pub(crate) fn decode(offset: usize, message: impl Into<String>) -> Self {
        Error::Decode {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn for_image(self, id: impl Into<String>) -> Self {
        Error::Image {
            id: id.into(),
            source: Box::new(self),
        }
    }
}
