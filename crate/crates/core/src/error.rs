use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix not positive semidefinite: smallest eigenvalue {min:e} below {threshold:e}")]
    NotPsd { min: f64, threshold: f64 },
    #[error("order {order} exceeds the supported maximum {max}")]
    OrderTooLarge { order: usize, max: usize },
    #[error("singular or indefinite system: {0}")]
    Singular(String),
    #[error("non-physical coefficients: {0}")]
    NonPhysical(String),
    #[error("{what} did not converge within {iterations} iterations")]
    NotConverged { what: &'static str, iterations: usize },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("formula domain: {0}")]
    Domain(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
