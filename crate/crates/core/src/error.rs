use thiserror::Error;

/// Broad classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad or insufficient input data.
    Data,
    /// A numerical routine failed.
    Numeric,
    /// Invalid parameters or specification.
    Config,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: treatment value `{value}` is not 0/1")]
    NonBinaryTreatment { row: usize, value: String },
    #[error("no variation in treatment: {treated} treated of {n} units")]
    NoVariationInTreatment { treated: usize, n: usize },
    #[error("row {row}: column `{column}` is not numeric (`{value}`)")]
    NonNumericOutcome {
        row: usize,
        column: String,
        value: String,
    },
    #[error("covariate vectors have inconsistent length at unit `{id}`")]
    CovariateLength { id: String },
    #[error("empty sample")]
    EmptySample,
    #[error("probability {0} is outside (0, 1]")]
    TauOutOfRange(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate variance (constant input)")]
    DegenerateVariance,
    #[error("singular design matrix")]
    SingularDesign,
    #[error("quantile regression did not converge at tau = {0:?}")]
    SolverNonconvergence(Vec<f64>),
    #[error("too few treated units: {found} < {required}")]
    TooFewTreatedUnits { found: usize, required: usize },
    #[error("insufficient treated pairs: {found} < {required}")]
    InsufficientPairs { found: usize, required: usize },
    #[error("evaluation grid is empty, unsorted or non-finite")]
    GridCoverage,
    #[error("insufficient pre-treatment periods: {found} < {required}")]
    InsufficientPeriods { found: usize, required: usize },
    #[error("bootstrap replicate {replicate} failed: {source}")]
    PipelineFailure {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::MissingColumn(_)
            | Error::NonBinaryTreatment { .. }
            | Error::NoVariationInTreatment { .. }
            | Error::NonNumericOutcome { .. }
            | Error::CovariateLength { .. }
            | Error::EmptySample
            | Error::LengthMismatch(..)
            | Error::DegenerateVariance
            | Error::TooFewTreatedUnits { .. }
            | Error::InsufficientPairs { .. }
            | Error::InsufficientPeriods { .. }
            | Error::Io(_)
            | Error::Csv(_) => ErrorKind::Data,
            Error::SingularDesign | Error::SolverNonconvergence(_) => ErrorKind::Numeric,
            Error::PipelineFailure { source, .. } => match source.kind() {
                ErrorKind::Config => ErrorKind::Config,
                _ => ErrorKind::Numeric,
            },
            Error::TauOutOfRange(_)
            | Error::GridCoverage
            | Error::InvalidSpec(_)
            | Error::InvalidArgument(_) => ErrorKind::Config,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
