use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid confinement: {0}")]
    InvalidConfinement(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("parameter {x} outside the parameter domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },

    #[error("derivative order {0} not supported (max 2)")]
    DerivativeOrder(usize),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("boundary condition {bc} is incompatible with a {mesh} mesh")]
    IncompatibleBoundary { bc: &'static str, mesh: &'static str },

    #[error("degenerate arclength constraint at node {node}: |d| = {norm:.3e}")]
    DegenerateConstraint { node: usize, norm: f64 },

    #[error("singular saddle-point system at unknown {index} (node {node:?})")]
    SingularSystem { index: usize, node: Option<usize> },

    #[error("matrix not positive definite at row {0}")]
    NotPositiveDefinite(usize),

    #[error(
        "energy increased at step {step}: {before:.17e} -> {after:.17e} (stability failure)"
    )]
    StabilityFailure { step: usize, before: f64, after: f64 },

    #[error("invalid parameter `{name}`: {msg}")]
    InvalidParameter { name: &'static str, msg: String },

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("snapshot parse error at line {line}: {msg}")]
    Snapshot { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
