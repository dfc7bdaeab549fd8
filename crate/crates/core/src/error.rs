use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("index out of bounds: {0}")]
    OutOfBounds(String),
    #[error("unsupported layer: {0}")]
    Unsupported(String),
    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: &'static str,
    },
    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("payload digest mismatch in {0}")]
    DigestMismatch(PathBuf),
    #[error("shape table mismatch: {0}")]
    ShapeTable(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("capacity exceeded: requested {requested}, available {available}")]
    Capacity { requested: usize, available: usize },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("overlapping class subsets: class {0} appears twice")]
    OverlappingClasses(u8),
    #[error("duplicate source id {0:?}")]
    DuplicateSource(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable numeric code, shared by the CLI error line and the C API.
    pub fn code(&self) -> i32 {
        match self {
            Error::Shape(_) => 1,
            Error::InvalidArgument(_) => 2,
            Error::NonFinite(_) => 3,
            Error::OutOfBounds(_) => 4,
            Error::Unsupported(_) => 5,
            Error::BadMagic { .. } => 6,
            Error::Truncated { .. } => 7,
            Error::VersionMismatch { .. } => 8,
            Error::DigestMismatch(_) => 9,
            Error::ShapeTable(_) => 10,
            Error::Header(_) => 11,
            Error::Capacity { .. } => 12,
            Error::Dataset(_) => 13,
            Error::OverlappingClasses(_) => 14,
            Error::DuplicateSource(_) => 15,
            Error::Missing(_) => 16,
            Error::Io { .. } => 17,
            Error::Json(_) => 18,
        }
    }

    /// Short machine-readable tag, e.g. `bad_magic`.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonFinite(_) => "non_finite",
            Error::OutOfBounds(_) => "out_of_bounds",
            Error::Unsupported(_) => "unsupported",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::DigestMismatch(_) => "digest_mismatch",
            Error::ShapeTable(_) => "shape_table",
            Error::Header(_) => "header",
            Error::Capacity { .. } => "capacity",
            Error::Dataset(_) => "dataset",
            Error::OverlappingClasses(_) => "overlapping_classes",
            Error::DuplicateSource(_) => "duplicate_source",
            Error::Missing(_) => "missing",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
