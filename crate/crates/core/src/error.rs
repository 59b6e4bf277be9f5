use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("batch exceeds shard ({batch} > {shard})")]
    BatchExceedsShard { batch: usize, shard: usize },

    #[error("batch size must be at least 1")]
    ZeroBatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("probability vector sums to {0}, not 1")]
    InvalidProbabilities(f64),

    #[error("model does not emit class probabilities")]
    NotProbabilistic,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid ring: inner radius {inner} must be positive and below outer radius {outer}")]
    InvalidRing { inner: f64, outer: f64 },

    #[error("degenerate link between device {from} and {to:?} (zero distance)")]
    DegenerateLink { from: usize, to: Option<usize> },

    #[error("invalid path-loss parameters: omega0={omega0}, kappa={kappa}")]
    InvalidPathLoss { omega0: f64, kappa: f64 },

    #[error("no gradients to aggregate")]
    NoGradients,

    #[error("degenerate normalization (zero gradient variance)")]
    DegenerateNormalization,

    #[error("power constraint violated at device {device}: {used} > {budget}")]
    PowerConstraint { device: usize, used: f64, budget: f64 },

    #[error("de-noising factor must be positive, got {0}")]
    InvalidZeta(f64),

    #[error("aggregation error paths disagree by {0}")]
    ErrorIdentity(f64),

    #[error("empty set")]
    EmptySet,

    #[error("cannot form {clusters} clusters from {devices} devices")]
    InvalidClusterCount { clusters: usize, devices: usize },

    #[error("infeasible lead budget in cluster {0}")]
    InfeasibleLeadBudget(usize),

    #[error("de-noising factor undefined (zero denominator)")]
    UndefinedZeta,

    #[error("learning rate {lr} violates gamma < 1/(2L) with L = {lipschitz}")]
    LearningRatePremise { lr: f64, lipschitz: f64 },

    #[error("invalid solver options: {0}")]
    SolverOptions(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed IDX file: {0}")]
    Idx(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
