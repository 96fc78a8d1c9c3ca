use thiserror::Error;

/// Errors raised by the numerical pipeline and its I/O layer.
#[derive(Debug, Error)]
pub enum WaveError {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("surface too close to the bottom: 1 + min(eta) = {depth:.3e} must exceed {floor:.3e}")]
    DepthFloor { depth: f64, floor: f64 },

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("operator asymmetry {asymmetry:.3e} exceeds the hard limit {limit:.3e}")]
    Asymmetry { asymmetry: f64, limit: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// An error raised while running one pipeline stage.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<WaveError>,
    },
}

impl WaveError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            WaveError::Config(_) | WaveError::InvalidArgument(_) | WaveError::Grid(_) => 2,
            WaveError::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}

/// Tags errors with the pipeline stage that raised them.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            tagged @ WaveError::Stage { .. } => tagged,
            other => WaveError::Stage { stage, source: Box::new(other) },
        })
    }
}

pub type Result<T> = std::result::Result<T, WaveError>;
