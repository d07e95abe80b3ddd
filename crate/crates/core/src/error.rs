use thiserror::Error;

/// Errors surfaced by the reconstruction pipeline.
#[derive(Error, Debug)]
pub enum SplatError {
    #[error("index {index} out of range for cloud of {len} Gaussians")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("degenerate covariance for Gaussian {index}: {detail}")]
    DegenerateCovariance { index: usize, detail: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty initialization: no pixel has both mask=1 and valid depth")]
    EmptyInitialization,

    #[error("insufficient overlap for baseline fit: {found} jointly valid pixels, need {needed}")]
    InsufficientOverlap { found: usize, needed: usize },

    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("empty supervision: no pixel carries loss weight")]
    EmptySupervision,

    #[error("diverged optimization: non-finite gradient in parameter group `{group}`")]
    Diverged { group: String },

    #[error("scene out of view: {0}")]
    SceneOutOfView(String),

    #[error("dataset error ({context}): {detail}")]
    Dataset { context: String, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error ({path}): {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SplatError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SplatError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dataset(context: impl Into<String>, detail: impl Into<String>) -> Self {
        SplatError::Dataset {
            context: context.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SplatError>;
