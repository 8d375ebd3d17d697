use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("grid cannot resolve the fields: {0}")]
    Resolution(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("series too short: {0}")]
    Size(String),

    #[error("unknown name `{0}`")]
    Lookup(String),

    #[error("random search exhausted {evaluations} evaluations without exceeding threshold {threshold}")]
    NotFound { evaluations: usize, threshold: f64 },

    #[error("statistic undefined: {0}")]
    UndefinedStatistic(String),

    #[error("geometry inconsistency: {0}")]
    GeometryInconsistency(String),

    #[error("controller fault: {0}")]
    Fault(String),

    #[error("summaries not comparable: {0}")]
    Comparison(String),

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error("csv parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
