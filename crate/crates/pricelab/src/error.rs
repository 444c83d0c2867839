use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("matrix is not positive semidefinite: pivot {pivot} has value {value:e}")]
    NotPsd { pivot: usize, value: f64 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("negative density {value:e} at x = {x} exceeds the floor; refine the inversion settings")]
    NegativeDensity { x: f64, value: f64 },
    #[error("missing Levy area for non-commutative pair ({0}, {1})")]
    MissingLevyArea(usize, usize),
    #[error("truncation infeasible: condition {condition} fails ({detail})")]
    Infeasible { condition: u8, detail: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParam(msg.into()))
}
