use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("expected {expected} joints, found {found}")]
    JointCount { expected: usize, found: usize },

    #[error("degenerate skeleton: bone {bone} ({name}) has zero length")]
    DegenerateBone { bone: usize, name: String },

    #[error("offset table inconsistent with variant: {0}")]
    Offsets(String),

    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("optimizer diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("NaN loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("bad parameter file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by numerics rather than inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::NanLoss { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
