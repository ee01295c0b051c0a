use thiserror::Error;

/// Errors produced by model construction, solvers and I/O.
#[derive(Error, Debug)]
pub enum PlamError {
    #[error("covariate values are degenerate (min equals max)")]
    DegenerateCovariate,

    #[error("basis dimension {k} is smaller than the spline order {order}")]
    BasisTooSmall { k: usize, order: usize },

    #[error("interior knot {value} falls outside the open interval ({lo}, {hi})")]
    KnotOutsideInterval { value: f64, lo: f64, hi: f64 },

    #[error("row count mismatch: {left} vs {right}")]
    RowMismatch { left: usize, right: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty residual vector")]
    EmptyResiduals,

    #[error("degrees-of-freedom correction {dof} is not smaller than the sample size {n}")]
    DofTooLarge { dof: usize, n: usize },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("could not draw a non-singular elemental subsample after {attempts} attempts")]
    SubsamplingFailed { attempts: usize },

    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("loss function must be bounded for this solver")]
    UnboundedLoss,

    #[error("all observations were rejected by the weight function")]
    AllObservationsRejected,

    #[error("candidate grid of basis dimensions is empty")]
    EmptyKGrid,

    #[error("not enough observations: n = {n} but the largest candidate design has {cols} columns")]
    InsufficientObservations { n: usize, cols: usize },

    #[error("selection criterion is undefined: the loss sum vanished at a positive scale")]
    DegenerateCriterion,

    #[error("operation requires a robust (MM) fit")]
    RequiresMmFit,

    #[error("{matrix} matrix is singular (condition estimate {cond:.3e})")]
    SingularMatrix { matrix: &'static str, cond: f64 },

    #[error("weights are all zero")]
    ZeroWeights,

    #[error("column {0:?} not found in the dataset header")]
    MissingColumn(String),

    #[error("could not parse {value:?} in column {column:?} as a number")]
    BadNumeric { column: String, value: String },

    #[error("no complete rows remain after removing missing values")]
    EmptyDataset,

    #[error("dataset needs at least one smooth covariate")]
    NoSmoothCovariates,

    #[error("invalid simulation id: model {0} (expected 1..=6)")]
    BadModelId(u8),

    #[error("replication count must be positive")]
    ZeroReplications,

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PlamError>;
