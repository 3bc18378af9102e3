//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HeatNetError {
    #[error("dangling node id {node} referenced by edge {edge}")]
    DanglingNode { edge: u32, node: u32 },

    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u32 },

    #[error("pipe edge {edge} is missing a mirror return pipe")]
    MissingMirror { edge: u32 },

    #[error("mirror pairing inconsistent at edge {edge}: {reason}")]
    MirrorMismatch { edge: u32, reason: String },

    #[error("heating-system edge {edge} does not connect a consumer feed/return pair")]
    HeatingSystemEndpoints { edge: u32 },

    #[error("edge {edge}: {reason}")]
    InvalidEdge { edge: u32, reason: String },

    #[error("node {node}: {reason}")]
    InvalidNode { node: u32, reason: String },

    #[error("missing {kind} spec for edge {edge}")]
    MissingSpec { kind: &'static str, edge: u32 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("design vector does not match network: {0}")]
    DesignMismatch(String),

    #[error("diameter {value} out of bounds (0, {max}]")]
    DiameterBounds { value: f64, max: f64 },

    #[error("consumers {0:?} are isolated (no pipe path to a producer)")]
    IsolatedConsumer(Vec<u32>),

    #[error("network is hydraulically indeterminate: {0}")]
    Indeterminate(String),

    #[error("Newton solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    NewtonFailed { iterations: usize, residual: f64 },

    #[error("adjoint factorization failed")]
    AdjointFactorization,

    #[error("state Jacobian factorization failed")]
    SingularJacobian,

    #[error("thresholding would disconnect consumers {0:?} with positive demand")]
    ThresholdDisconnects(Vec<u32>),

    #[error("topology is infeasible: {0}")]
    InfeasibleTopology(String),

    #[error("insufficient data for fit: need at least {needed} converged records with distinct sizes, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("unsupported case size selector {0} (expected 1, 2 or 3)")]
    UnsupportedSize(u32),

    #[error("temperature ordering violated: feed {feed} K, return {ret} K, house {house} K")]
    TemperatureOrdering { feed: f64, ret: f64, house: f64 },

    #[error("LMTD arguments must be positive, got ({0}, {1})")]
    NonpositiveLmtd(f64, f64),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HeatNetError>;
