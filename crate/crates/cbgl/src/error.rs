//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by map loading, scan handling, matching, and the
/// localization pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed PGM image data.
    #[error("map image: {0}")]
    MapFormat(String),

    /// Malformed or inconsistent map metadata.
    #[error("map metadata: {0}")]
    Metadata(String),

    /// Malformed scan data or scan file.
    #[error("scan: {0}")]
    ScanFormat(String),

    /// Two scans that must share an angular range and ray count do not.
    #[error(
        "scan shape mismatch: lambda {lambda_a} vs {lambda_b}, rays {rays_a} vs {rays_b}"
    )]
    ScanShapeMismatch {
        lambda_a: f64,
        lambda_b: f64,
        rays_a: usize,
        rays_b: usize,
    },

    /// A pose that must lie in free space does not.
    #[error("pose ({x:.3}, {y:.3}) is not in free space")]
    PoseNotFree { x: f64, y: f64 },

    /// The map contains no free cells.
    #[error("map has no free space")]
    NoFreeSpace,

    /// An operation over hypotheses received an empty set.
    #[error("empty hypothesis set")]
    EmptyHypotheses,

    /// A parameter is out of its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A scan has too few non-clamped rays for matching.
    #[error("too few valid rays: {have} (need at least {need})")]
    TooFewValidRays { have: usize, need: usize },

    /// An environment spec cannot be realized.
    #[error("infeasible environment: {0}")]
    Infeasible(String),

    /// File-system failure, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an I/O failure with the path it happened on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
