//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Magic tag mismatch; the tag always lives at byte offset 0.
    #[error("{}: bad magic {found:?} at byte offset 0, expected {expected:?}", path.display())]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    /// Payload shorter (or longer) than the header promises.
    #[error(
        "{}: payload size mismatch: expected {expected} bytes after the {header_len}-byte \
         header, found {actual}",
        path.display()
    )]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
        header_len: u64,
    },

    #[error("{}: invalid header field `{field}` at byte offset {offset}: {detail}", path.display())]
    Header {
        path: PathBuf,
        field: &'static str,
        offset: u64,
        detail: String,
    },

    /// The file decodes fine but is not the raster type the caller asked for.
    #[error("{}: raster is {found}, not {expected}", path.display())]
    RasterType {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("invalid covariance at pixel ({row}, {col}): {detail}")]
    InvalidCovariance {
        row: usize,
        col: usize,
        detail: String,
    },

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("singular covariance at epoch {epoch}: determinant {det:.6e} is not positive")]
    SingularEpoch { epoch: usize, det: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate statistics: {0}")]
    Degenerate(String),

    #[error(
        "patch sampling budget exhausted: accepted {accepted} of {requested} pairs after \
         {attempts} attempts (acceptance rate {rate:.4})"
    )]
    SamplingBudget {
        requested: usize,
        accepted: usize,
        attempts: usize,
        rate: f64,
    },

    #[error("dataset {}: {detail}", path.display())]
    Dataset { path: PathBuf, detail: String },

    #[error("manifest {}: {detail}", path.display())]
    Manifest { path: PathBuf, detail: String },

    #[error("checkpoint {}: {detail}", path.display())]
    Checkpoint { path: PathBuf, detail: String },

    #[error("ROI `{label}`: {detail}")]
    Roi { label: String, detail: String },
}

impl Error {
    /// Attaches a path to a bare I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
