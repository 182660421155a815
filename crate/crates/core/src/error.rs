use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("rectangle ({x},{y},{w},{h}) exceeds image of {width}x{height}")]
    OutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },

    #[error("rectangle has zero area")]
    ZeroArea,

    #[error("CLAHE grid {grid_w}x{grid_h} too fine for {width}x{height} image (regions must be at least 2x2)")]
    GridTooFine {
        grid_w: u32,
        grid_h: u32,
        width: u32,
        height: u32,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("tile size {tile_size} larger than image of {width}x{height}")]
    TileLargerThanImage {
        tile_size: u32,
        width: u32,
        height: u32,
    },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },

    #[error("catalog is missing column `{0}`")]
    MissingColumn(String),

    #[error("catalog contains no valid rows ({skipped} skipped)")]
    EmptyCatalog { skipped: usize },

    #[error("latitude {lat} beyond the projection limit of {max_abs_lat} degrees")]
    PolarRegion { lat: f64, max_abs_lat: f64 },

    #[error("crater box falls entirely outside the mosaic")]
    OffMosaic,

    #[error("invalid diameter range [{d_min}, {d_max}]")]
    InvalidRange { d_min: f64, d_max: f64 },

    #[error("{}line {line}: {message}", file_prefix(.file))]
    Parse {
        file: Option<PathBuf>,
        line: usize,
        message: String,
    },

    #[error("{}line {line}: coordinate out of range: {message}", file_prefix(.file))]
    Range {
        file: Option<PathBuf>,
        line: usize,
        message: String,
    },

    #[error("histogram is empty")]
    EmptyHistogram,

    #[error("external command failed ({status}): {command}")]
    CommandFailed { command: String, status: String },

    #[error("external stage produced no output for: {}", .0.join(", "))]
    MissingOutputs(Vec<String>),

    #[error("output `{stem}` is {actual:?} but input was {expected:?}")]
    DimensionDrift {
        stem: String,
        expected: (u32, u32),
        actual: (u32, u32),
    },

    #[error("tile origin ({0}, {1}) is not part of the grid")]
    UnknownOrigin(u32, u32),

    #[error("detections for `{0}` have no ground-truth image")]
    StemMismatch(String),

    #[error("world transform is singular")]
    SingularTransform,

    #[error("need at least 3 groups to split, found {0}")]
    TooFewGroups(usize),

    #[error("composition `{composition}` requires source `{source_name}`")]
    MissingSource {
        composition: String,
        source_name: String,
    },

    #[error("could not place crater {index} without overlap after {attempts} attempts")]
    PlacementFailure { index: usize, attempts: usize },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

fn file_prefix(file: &Option<PathBuf>) -> String {
    match file {
        Some(p) => format!("{}: ", p.display()),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a file path to parse and range errors that were raised while
    /// reading from an anonymous source.
    pub fn with_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::Parse { line, message, .. } => Error::Parse {
                file: Some(path.into()),
                line,
                message,
            },
            Error::Range { line, message, .. } => Error::Range {
                file: Some(path.into()),
                line,
                message,
            },
            other => other,
        }
    }
}
