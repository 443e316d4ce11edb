use std::path::PathBuf;

/// Errors produced anywhere in the detection and estimation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("id {value} out of range for {grid_n}x{grid_n} family (capacity {capacity})")]
    InvalidId {
        value: u64,
        grid_n: usize,
        capacity: u64,
    },
    #[error("unsupported grid size {0} (expected 3, 4 or 5)")]
    UnsupportedGrid(usize),
    #[error("{0} px per cell is below the minimum of 8")]
    ResolutionTooLow(u32),
    #[error("image {width}x{height} is smaller than the {min}x{min} threshold block")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("support region has zero mass")]
    DegenerateSupport,
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("candidate has no unique baseline node")]
    NoBaseline,
    #[error("structure mismatch: {0}")]
    StructureMismatch(String),
    #[error("decode failure: {0}")]
    DecodeFailure(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
