use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed RLE descriptor: {0}")]
    MalformedDescriptor(String),

    #[error("cannot parse RLE token {token:?}")]
    RleParse { token: String },

    #[error("invalid run at position {index}: start {start}, length {length}")]
    InvalidRun { index: usize, start: i64, length: i64 },

    #[error("run ({start}, {length}) exceeds image of {total} pixels")]
    OutOfBounds { start: usize, length: usize, total: usize },

    #[error("invalid class id {class_id} (allowed {min}..={max})")]
    InvalidClass { class_id: i64, min: i64, max: i64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("pairing mismatch: {0}")]
    Pairing(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Unknown key or unparsable value; a usage problem rather than a domain one.
    #[error("invalid setting {key:?}: {message}")]
    InvalidSetting { key: String, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("row error at line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("image {image_id}: {source}")]
    Record {
        image_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),

    #[error("checkpoint integrity failure: {0}")]
    Integrity(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("png encoding: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error("png decoding: {0}")]
    PngDecode(#[from] png::DecodingError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn for_image(self, image_id: &str) -> Self {
        Error::Record {
            image_id: image_id.to_string(),
            source: Box::new(self),
        }
    }
}
