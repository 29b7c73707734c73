use thiserror::Error;

/// Errors raised across estimation, identification and the simulation lab.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unbalanced panel: unit {unit} has no observation at time {time}")]
    UnbalancedPanel { unit: i64, time: i64 },
    #[error("duplicate panel cell: unit {unit}, time {time}")]
    DuplicateCell { unit: i64, time: i64 },
    #[error("non-finite value at unit {unit}, time {time}, variable {variable}")]
    NonFinite {
        unit: i64,
        time: i64,
        variable: String,
    },
    #[error(
        "bad variable ordering: {policies} policies + {outcomes} outcomes != {columns} columns"
    )]
    BadOrdering {
        policies: usize,
        outcomes: usize,
        columns: usize,
    },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("dummy regressors are collinear with the absorbed fixed effects")]
    DegenerateDummy,
    #[error("insufficient observations: need T - p >= {needed}, have {have}")]
    InsufficientObs { needed: usize, have: usize },
    #[error("singular design: regressor Gram matrix reciprocal condition {rcond:.3e}")]
    SingularDesign { rcond: f64 },
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("policy innovation variance is numerically zero (o_kk = {0:.3e})")]
    ZeroPolicyVariance(f64),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("bootstrap unstable: {failed} of {reps} replications failed")]
    BootstrapUnstable { failed: usize, reps: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid scenario configuration: {0}")]
    BadConfig(String),
    #[error("no treated cells: ATT-type estimands are undefined")]
    EmptyTreatedSet,
    #[error("degenerate assignment: every cell is {0}")]
    DegenerateAssignment(&'static str),
    #[error("weight grid too narrow: captured mass {mass:.9}")]
    GridTooNarrow { mass: f64 },
    #[error("policy values are all zero")]
    AllZeros,
    #[error("negative policy value {0} in a non-negative weight computation")]
    NegativePolicy(f64),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("empty four-mean cell: {0}")]
    EmptyCell(&'static str),
    #[error("theorem {theorem} requires regime {expected}, got {actual}")]
    RegimeMismatch {
        theorem: String,
        expected: String,
        actual: String,
    },
    #[error("adjacency matrix is not symmetric at ({0}, {1})")]
    AsymmetricAdjacency(usize, usize),
    #[error("adjacency has a self-loop at unit {0}")]
    SelfLoop(usize),
    #[error("regressors are collinear (reciprocal condition {rcond:.3e})")]
    CollinearRegressors { rcond: f64 },
    #[error("simulated panel has no potential outcomes under exposure")]
    MissingExposure,
}

pub type Result<T> = std::result::Result<T, Error>;
