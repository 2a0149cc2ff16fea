use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the flow laboratory.
#[derive(Debug, Error)]
pub enum DhymError {
    #[error("metric not positive definite")]
    MetricNotPositiveDefinite,

    #[error("unsupported complex dimension {0} (expected 1, 2 or 3)")]
    InvalidDimension(usize),

    #[error("grid resolution {0} rejected: must be a power of two and at least 8")]
    InvalidResolution(usize),

    #[error("non-Hermitian curvature input (deviation {deviation:e})")]
    NonHermitian { deviation: f64 },

    #[error("matrix shape mismatch: expected {expected}x{expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("band exceeds dealiasing limit (k_band {k_band} > N/3 with N = {resolution})")]
    BandTooLarge { k_band: usize, resolution: usize },

    #[error("field length {got} does not match grid size {expected}")]
    FieldLength { expected: usize, got: usize },

    #[error("non-finite value in {what} at grid index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("at grid index {index}: {source}")]
    AtPoint {
        index: usize,
        #[source]
        source: Box<DhymError>,
    },

    #[error("winding path crosses zero; θ̂ ill-defined (at t = {t:e})")]
    WindingCrossesZero { t: f64 },

    #[error("winding under-resolved, increase n_steps (jump {jump:.3} rad near t = {t:e})")]
    WindingUnderResolved { t: f64, jump: f64 },

    #[error("step diverged in stage {stage}")]
    StepDiverged { stage: usize },

    #[error("flow blow-up suspected at t = {t}")]
    BlowUp { t: f64 },

    #[error("insufficient trajectory sampling: {0}")]
    InsufficientSampling(String),

    #[error("not a dHYM point (residual {residual:e})")]
    NotDhymPoint { residual: f64 },

    #[error("oscillation below floor; nothing to fit")]
    OscillationFloor,

    #[error("degenerate: flow already spatially constant")]
    Degenerate,

    #[error("no reference obtained: {0}")]
    NoReference(String),

    #[error("nothing to write")]
    NothingToWrite,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed snapshot {path}: {message}")]
    Snapshot { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, DhymError>;

impl DhymError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DhymError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_point(index: usize, source: DhymError) -> Self {
        DhymError::AtPoint {
            index,
            source: Box::new(source),
        }
    }
}
