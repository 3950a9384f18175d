use thiserror::Error;

/// Errors raised by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("edge density {density} is too low for a connected graph on {nodes} nodes")]
    DensityTooLow { nodes: usize, density: f64 },

    #[error("topology is not connected")]
    Disconnected,

    #[error("distance must be strictly positive (path-loss model is singular at zero)")]
    ZeroDistance,

    #[error("invalid radio parameters: {0}")]
    InvalidRadio(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("node {0} is not a transmitter (it has an empty broadcast group)")]
    NotATransmitter(usize),

    #[error("retention rate {0} outside (0, 1]")]
    RetentionOutOfRange(f64),

    #[error("layer {layer} would lose all channels at channel retention {eta}")]
    LayerFullyPruned { layer: usize, eta: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("receiver {0} is missing its own model with a full indicator")]
    MissingSelfModel(usize),

    #[error("aggregation weights invalid: {0}")]
    InvalidWeights(String),

    #[error("fairness index undefined for an all-zero allocation")]
    AllZeroAllocation,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("tree cost must be strictly positive")]
    NonPositiveCost,

    #[error("task is not strongly convex; contraction check requires the ridge task")]
    NotStronglyConvex,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("payload decode failed: {0}")]
    Decode(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
