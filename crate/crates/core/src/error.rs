use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate covariance (det = {det:e})")]
    DegenerateCovariance { det: f64 },

    #[error("covariance is not positive definite: p11={p11}, p12={p12}, p22={p22}")]
    NotPositiveDefinite { p11: f64, p12: f64, p22: f64 },

    #[error("malformed path: {0}")]
    MalformedPath(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("start belief is in collision")]
    InfeasibleStart,

    #[error("no collision-free start found after {attempts} draws")]
    UnsatisfiableScenario { attempts: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("truncated record {index}")]
    TruncatedRecord { index: usize },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("density grid has no positive mass")]
    EmptyDensity,

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("EM degenerated: component {component} lost all weight")]
    DegenerateMixture { component: usize },

    #[error("{which} vertex is in collision")]
    InfeasibleEndpoint { which: &'static str },

    #[error("goal is not reachable from start")]
    Disconnected,

    #[error("reconstruction failed after {rounds} fallback rounds ({samples} samples)")]
    ReconstructionFailed { rounds: usize, samples: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}
