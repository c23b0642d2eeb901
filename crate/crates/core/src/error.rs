use std::path::PathBuf;

/// Errors produced anywhere in the scoring pipeline.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    /// A value lies outside its admissible range.
    #[error("value out of range: {0}")]
    Range(String),
    /// An image or grid is smaller than the supported minimum.
    #[error("invalid shape: {0}")]
    Shape(String),
    /// Two inputs that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// An external backend could not be launched or violated its protocol.
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    /// The tensor cache does not hold the requested entry.
    #[error("cache miss: {}", .0.display())]
    CacheMiss(PathBuf),
    /// Too few usable pixels to estimate a focal length.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    /// No pixel survives the overlap mask.
    #[error("empty overlap between projected views")]
    EmptyOverlap,
    /// The relative pose has no baseline, so the fundamental matrix is undefined.
    #[error("degenerate pose: {0}")]
    DegeneratePose(String),
    /// The epipolar distance needs at least one correspondence.
    #[error("no correspondences")]
    NoMatches,
    /// A sequence has no frames, or too few for the requested stride.
    #[error("empty sequence: {0}")]
    EmptySequence(String),
    /// An image file could not be decoded.
    #[error("corrupt image {}: {reason}", path.display())]
    CorruptImage { path: PathBuf, reason: String },
    /// A tensor container or sidecar file is malformed.
    #[error("malformed file: {0}")]
    Format(String),
    /// Invalid user configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// More than half of the evaluated pairs failed.
    #[error("failure budget exceeded: {failed} of {total} pairs failed")]
    FailureBudget { failed: usize, total: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag, used in reports and over the wire.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Range(_) => "range",
            Error::Shape(_) => "shape",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::BackendUnavailable(_) => "backend_unavailable",
            Error::CacheMiss(_) => "cache_miss",
            Error::DegenerateGeometry(_) => "degenerate_geometry",
            Error::EmptyOverlap => "empty_overlap",
            Error::DegeneratePose(_) => "degenerate_pose",
            Error::NoMatches => "no_matches",
            Error::EmptySequence(_) => "empty_sequence",
            Error::CorruptImage { .. } => "corrupt_image",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::FailureBudget { .. } => "failure_budget",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
