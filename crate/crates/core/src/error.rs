use crate::mesh::DatasetId;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid stencil: {0}")]
    InvalidStencil(String),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown dataset {0}")]
    UnknownDataset(DatasetId),

    #[error("invalid argument to loop `{kernel}`: {reason}")]
    InvalidArg { kernel: String, reason: String },

    /// A point access fell outside a dataset's allocated extent.
    #[error(
        "out-of-extent access: loop {loop_id:?} tile {tile:?} dataset `{dataset}` point {point:?}"
    )]
    OutOfExtent {
        loop_id: Option<usize>,
        tile: Option<usize>,
        dataset: String,
        point: Vec<i64>,
    },

    /// A kernel accessed an argument in a way its declaration does not allow.
    #[error("access violation in loop {loop_id} on dataset `{dataset}`: {reason}")]
    AccessViolation {
        loop_id: usize,
        dataset: String,
        reason: String,
    },

    #[error(
        "dataset `{dataset}` needs {needed} halo points in dim {dim} but only {allocated} are allocated"
    )]
    InsufficientHalo {
        dataset: String,
        dim: usize,
        needed: i64,
        allocated: i64,
    },

    #[error("plan signature does not match the chain")]
    PlanMismatch,

    #[error("loop chain is empty")]
    EmptyChain,

    #[error("invalid tile sizes: {0}")]
    InvalidTileSize(String),

    #[error("no tile shape satisfies the cache constraints: {0}")]
    SizerInfeasible(String),

    #[error("reduction handle {0} is unknown or was already consumed")]
    StaleHandle(u64),

    #[error("invalid decomposition: {0}")]
    Decomposition(String),

    #[error("halo depth {depth} in dim {dim} exceeds neighbour width {width}")]
    HaloTooDeep { dim: usize, depth: i64, width: i64 },
}
