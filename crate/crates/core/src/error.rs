use std::path::PathBuf;

use thiserror::Error;

use crate::ppo::TrainingLog;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid vehicle parameters `{name}`: {reason}")]
    InvalidVehicle { name: String, reason: String },

    #[error("unknown vehicle `{0}`")]
    UnknownVehicle(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("step index {t} out of range for trajectory of length {len}")]
    IndexOutOfRange { t: usize, len: usize },

    #[error("episode already terminated ({0:?})")]
    EpisodeTerminated(crate::env::TerminatedBy),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scenario infeasible for `{vehicle}`: {limit} ({value:.4} > {bound:.4})")]
    InfeasibleScenario {
        vehicle: String,
        limit: &'static str,
        value: f64,
        bound: f64,
    },

    #[error("prior rejection budget of {budget} draws exhausted: no sample stayed within the {half_width} m corridor")]
    CorridorRejection { budget: usize, half_width: f64 },

    #[error("burn-in left the corridor at step {step}: distance {distance:.3} m > eps {eps} m")]
    BurnInDiverged { step: usize, distance: f64, eps: f64 },

    #[error("checkpoint window H={found} does not match the requested H={expected}")]
    HorizonMismatch { expected: usize, found: usize },

    #[error("non-finite loss during update {update}; update aborted")]
    NonFiniteLoss { update: usize },

    #[error("training diverged at update {update} (mean episode reward is NaN)")]
    Diverged {
        update: usize,
        partial_log: Box<TrainingLog>,
    },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
