use thiserror::Error;

/// Errors raised by the estimators, the simulator and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semi-definite (pivot {pivot} = {value:e})")]
    NotPsd { pivot: usize, value: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("parameter not identified: {0}")]
    Identification(String),

    #[error("rank-deficient design: column {column} is collinear with earlier columns")]
    RankDeficient { column: String },

    #[error("first-stage residuals have zero variance; rho is undefined")]
    DegenerateResidual,

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("invalid scenario: {0}")]
    InvalidSpec(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("every moment has zero variance")]
    AllMomentsDegenerate,

    #[error("confidence set is empty")]
    EmptyConfidenceSet,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::NotSymmetric(_) => "not_symmetric",
            Error::NotPsd { .. } => "not_psd",
            Error::Singular(_) => "singular",
            Error::Identification(_) => "identification",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::DegenerateResidual => "degenerate_residual",
            Error::InvalidSample(_) => "invalid_sample",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::UnknownScenario(_) => "unknown_scenario",
            Error::AllMomentsDegenerate => "all_moments_degenerate",
            Error::EmptyConfidenceSet => "empty_confidence_set",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
