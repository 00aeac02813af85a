use std::path::PathBuf;

/// Errors produced by the inpainting library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid patch shape {0}x{1}x{2}: every extent must be odd and positive")]
    InvalidPatchShape(usize, usize, usize),

    #[error("volume dimensions must be at least 1x1x1, got {0}x{1}x{2}")]
    EmptyVolume(usize, usize, usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("data length {actual} does not match volume size {expected}")]
    DataLength { expected: usize, actual: usize },

    #[error("non-finite value at voxel index {0}")]
    NonFinite(usize),

    #[error("{levels} pyramid levels is too many for a {width}x{height} video")]
    TooManyLevels { levels: usize, width: usize, height: usize },

    #[error("no valid source patch at pyramid level {level}: every patch touches the occlusion or the volume border")]
    EmptySourceSet { level: usize },

    #[error("voxel {0} has no known voxel in its patch and cannot be matched yet")]
    IsolatedVoxel(usize),

    #[error("occlusion covers the whole video; nothing to copy from")]
    FullyOccluded,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("soft weights for voxel {0} are not a probability vector")]
    UnnormalisedWeights(usize),

    #[error("affine warp has a singular linear part")]
    SingularWarp,

    #[error("missing frame {index}: {path}")]
    MissingFrame { index: usize, path: PathBuf },

    #[error("frame {path} is {actual}, expected {expected}")]
    FrameSize {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("no frames matching {pattern} in {dir}")]
    NoFrames { dir: PathBuf, pattern: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
