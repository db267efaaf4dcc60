use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] diffcore::DiffError),
    #[error(transparent)]
    Checkpoint(#[from] diffcore::checkpoint::CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("action {action} out of range (environment has {num_actions} actions)")]
    ActionOutOfRange { action: usize, num_actions: usize },
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("observation shape {actual:?} does not match expected {expected:?}")]
    ObservationShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("cannot sample {requested} keypoints from a trajectory of length {length}")]
    ViewLength { requested: usize, length: usize },
    #[error("{what}: row {row} has zero norm")]
    ZeroNorm { what: &'static str, row: usize },
    #[error("{what}: entry ({row}, {col}) is not strictly positive")]
    NonPositive {
        what: &'static str,
        row: usize,
        col: usize,
    },
    #[error("length mismatch in {what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,
    #[error("infeasible marginals: {0}")]
    InfeasibleMarginals(String),
    #[error("invalid ground metric: {0}")]
    InvalidMetric(String),
    #[error("support size {size} exceeds the exact solver limit {limit}")]
    SupportTooLarge { size: usize, limit: usize },
    #[error("seed {seed} belongs to the training set")]
    TrainSeedRequested { seed: u64 },
    #[error("invalid config key `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("malformed level dump at line {line}: {reason}")]
    LevelParse { line: usize, reason: String },
    #[error("malformed csv at line {line}: {reason}")]
    Csv { line: u64, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
