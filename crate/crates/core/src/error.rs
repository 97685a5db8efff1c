use thiserror::Error;

/// Errors raised by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("distance matrix is not square: {rows} rows but row {row} has {len} entries")]
    NotSquare { rows: usize, row: usize, len: usize },

    #[error("weight vector has length {got}, expected {expected}")]
    WeightLength { got: usize, expected: usize },

    #[error("space must contain at least one point")]
    EmptySpace,

    #[error("asymmetric distance: d[{i}][{j}] = {dij} but d[{j}][{i}] = {dji}")]
    Asymmetric { i: usize, j: usize, dij: f64, dji: f64 },

    #[error("nonzero diagonal entry d[{i}][{i}] = {value}")]
    NonzeroDiagonal { i: usize, value: f64 },

    #[error("invalid distance d[{i}][{j}] = {value} (must be finite and nonnegative)")]
    InvalidDistance { i: usize, j: usize, value: f64 },

    #[error("triangle inequality violated: d[{i}][{k}] = {dik} > d[{i}][{j}] + d[{j}][{k}] = {via}")]
    Triangle {
        i: usize,
        j: usize,
        k: usize,
        dik: f64,
        via: f64,
    },

    #[error("nonpositive weight {value} at point {i}")]
    NonpositiveWeight { i: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("edge list is not a tree: {0}")]
    NotATree(String),

    #[error("index {index} out of range for a space of {n} points")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("subset must be nonempty")]
    EmptySubset,

    #[error(
        "landmark table {table} breaks its precision promise at ({m}, {n}): defect {defect} >= 1/{precision}"
    )]
    LandmarkPrecision {
        table: usize,
        m: usize,
        n: usize,
        defect: f64,
        precision: u32,
    },

    #[error("exhaustive covering order requested for {n} points, above the cap of {cap}")]
    ExhaustiveCap { n: usize, cap: usize },

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("solver did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("sublevel set {{E <= {level}}} is empty")]
    EmptySublevel { level: f64 },

    #[error("interval endpoint {value} lies on the eigenvalue {eigenvalue}")]
    EndpointOnSpectrum { value: f64, eigenvalue: f64 },

    #[error("schedule needs at least {min} entries, got {got}")]
    ScheduleTooShort { got: usize, min: usize },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("operator is not self-adjoint: asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    NonSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("sequence must be nonempty")]
    EmptySequence,

    #[error("config error at line {line}: field `{field}`: {message}")]
    Config {
        line: usize,
        field: String,
        message: String,
    },

    #[error("output {0} already exists (pass --force to overwrite)")]
    OutputExists(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Process exit code for command-line front ends: 2 for configuration
    /// and input errors, 3 for solver failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoConvergence { .. } => 3,
            Error::Io(_) | Error::OutputExists(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
