use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("layers not nested at angle {angle:.6} rad (radii {radii:?})")]
    NestingViolation { angle: f64, radii: [f64; 3] },

    #[error("rejection sampling gave up after {attempts} attempts: {what}")]
    RetryCapExceeded { what: String, attempts: usize },

    #[error("requested {requested} principal components but the Gram matrix has numerical rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("electrode arcs overlap: {0}")]
    OverlappingElectrodes(String),

    #[error("mesh deformation inverted triangle {triangle} (signed area {area:e})")]
    DeformationFailure { triangle: usize, area: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("singular CEM system: {0}")]
    SingularSystem(String),

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("stroke is outside the brain layer: {0}")]
    StrokeOutsideBrain(String),

    #[error("inverse-crime guard: simulation refinement {sim} must exceed reconstruction refinement {recon}")]
    InverseCrime { sim: u32, recon: u32 },

    #[error("training aborted: {failed} of {attempted} samples failed")]
    TrainingFailed { failed: usize, attempted: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for failures caused by the numerics rather than by inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NestingViolation { .. }
                | Error::RetryCapExceeded { .. }
                | Error::RankDeficient { .. }
                | Error::DeformationFailure { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::SingularSystem(_)
                | Error::NoConvergence(_)
                | Error::TrainingFailed { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
