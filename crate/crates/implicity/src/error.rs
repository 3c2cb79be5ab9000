use thiserror::Error;

/// Errors raised across the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid geometry: {0}")]
    InvalidGrid(String),

    #[error("coordinate out of bounds: {0}")]
    OutOfBounds(String),

    #[error("non-finite coordinate in query ({x}, {y})")]
    NonFiniteQuery { x: f64, y: f64 },

    #[error("empty point set: {0}")]
    EmptyPointSet(String),

    #[error("degenerate vertical scale {0} m (training region is flat or broken)")]
    DegenerateScale(f64),

    #[error("too few usable patches: {got} (need at least {need})")]
    TooFewPatches { got: usize, need: usize },

    #[error("scene generation failed: {0}")]
    SceneGeneration(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("region not covered by inputs; missing windows: {0}")]
    RegionNotCovered(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error in {context}: {detail}")]
    Parse { context: String, detail: String },
}

impl Error {
    pub fn parse(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            detail: detail.into(),
        }
    }
}
