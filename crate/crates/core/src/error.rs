use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum FwiError {
    #[error("unsupported polynomial order {0} (only order 2 is implemented)")]
    UnsupportedOrder(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("no grid node within tolerance of ({x}, {y}, {z})")]
    NodeNotFound { x: f64, y: f64, z: f64 },

    #[error("invalid material field: {0}")]
    InvalidMaterial(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid load: {0}")]
    InvalidLoad(String),

    #[error("solver became unstable at step {step} (t = {time:.6e} s, max |x| = {max_abs:.3e})")]
    Unstable { step: usize, time: f64, max_abs: f64 },

    #[error("snapshot storage needs {required} bytes, budget is {budget} bytes")]
    StorageExhausted { required: u64, budget: u64 },

    #[error("misaligned wavefield stores: {0}")]
    MisalignedStores(String),

    #[error("time {t:.6e} s outside record [0, {end:.6e}] s")]
    OutsideRecord { t: f64, end: f64 },

    #[error("zero mass-like diagonal at material node {0}")]
    SingularMass(usize),

    #[error("zero-norm search direction with nonzero biasing weight")]
    ZeroDirection,

    #[error("line search failed after {backtracks} backtracks")]
    LineSearchFailed { backtracks: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown target model `{0}`")]
    UnknownModel(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl FwiError {
    /// CLI exit status: 1 for invalid input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            FwiError::UnsupportedOrder(_)
            | FwiError::InvalidGrid(_)
            | FwiError::NodeNotFound { .. }
            | FwiError::InvalidMaterial(_)
            | FwiError::InvalidLoad(_)
            | FwiError::Config(_)
            | FwiError::UnknownModel(_)
            | FwiError::Parse { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        FwiError::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, FwiError>;
