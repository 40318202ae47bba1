//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Forward axis is within tolerance of vertical; planar heading undefined.
    #[error("degenerate pose at frame {frame}: forward axis within {tol:e} of vertical")]
    DegeneratePose { frame: i64, tol: f64 },

    /// Quaternion norm too far from 1.
    #[error("invalid quaternion at frame {frame}: norm {norm} deviates from 1 by more than 1e-6")]
    InvalidQuaternion { frame: i64, norm: f64 },

    /// A requested window exceeds the trajectory bounds.
    #[error("window out of range: t={t}, horizon={horizon}, trajectory length {len}")]
    OutOfRange { t: usize, horizon: usize, len: usize },

    /// All-stationary log or otherwise unusable step statistics.
    #[error("degenerate trajectory {id}: mean step length {mean:e} below 1e-9")]
    DegenerateTrajectory { id: String, mean: f64 },

    /// Non-positive step length supplied for denormalization.
    #[error("invalid step length {0}: must be positive")]
    InvalidStepLength(f64),

    /// Trajectory too short to emit any sample under the given parameters.
    #[error("trajectory {id} too short: {len} poses, need at least {needed}")]
    TrajectoryTooShort { id: String, len: usize, needed: usize },

    /// Structured-text parse failure (pose logs, detection logs, manifests, courses).
    #[error("parse error in {path} at line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    /// I/O failure with the offending path.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Shard or checkpoint schema version not understood by this build.
    #[error("schema version mismatch in {path}: found {found}, expected {expected}")]
    SchemaVersionMismatch { path: String, found: u32, expected: u32 },

    /// Reference action has near-zero norm; its angle is undefined.
    #[error("degenerate action: reference norm {0:e} below threshold")]
    DegenerateAction(f64),

    /// An aggregate over an empty collection was requested.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Non-finite coordinate fed to an encoder or loss.
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),

    /// Tensor or sequence shape disagreement.
    #[error("shape mismatch: {context} (expected {expected}, got {got})")]
    ShapeMismatch { context: &'static str, expected: String, got: String },

    /// Every prediction/ground-truth pair was excluded by the norm threshold.
    #[error("all pairs degenerate: every ground-truth action below epsilon")]
    AllPairsDegenerate,

    /// A prediction/ground-truth pair was excluded by the norm threshold.
    #[error("degenerate pair: action norm below epsilon")]
    DegeneratePair,

    /// No samples survive the exclusion rule.
    #[error("empty after exclusion: {0}")]
    EmptyAfterExclusion(&'static str),

    /// Predictions and samples disagree in count.
    #[error("count mismatch: {samples} samples vs {predictions} predictions")]
    CountMismatch { samples: usize, predictions: usize },

    /// Training started with no data.
    #[error("no training data: {0}")]
    DataEmpty(String),

    /// A loss term became non-finite; names the offending term and, during
    /// training, the offending batch.
    #[error("non-finite loss: term `{term}` produced {value}{}", batch.map(|b| format!(" (batch {b})")).unwrap_or_default())]
    NonFiniteLoss { term: &'static str, value: f64, batch: Option<u64> },

    /// Checkpoint incompatible with the requested operation.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    /// Policy failure during a closed-loop trial, with the step index.
    #[error("policy error at sim step {step}: {msg}")]
    Policy { step: usize, msg: String },

    /// Configuration rejected (unknown key, bad type, bad value).
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
