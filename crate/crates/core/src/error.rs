use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid probability table: {0}")]
    InvalidPmf(String),

    #[error("invalid axis selection: {0}")]
    Axes(String),

    /// `p > 0` where `q = 0` in a relative entropy.
    #[error("absolute continuity violated at cell {cell:?}: p = {p:e} but q = 0")]
    SupportMismatch { cell: Vec<usize>, p: f64 },

    #[error("invalid series: {0}")]
    Series(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid model: {0}")]
    Model(String),

    /// The lifted chain has more than one closed communicating class.
    /// Each class is listed by its state indices.
    #[error("reducible chain with {} closed classes: {classes:?}", classes.len())]
    Reducible { classes: Vec<Vec<usize>> },

    /// The requested experiment does not apply to this model (e.g. a null
    /// validation on a model whose exact rate is positive).
    #[error("wrong regime: {0}")]
    Regime(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("internal consistency violation: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error classes, used by the command line front end for exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Regime(_) => ErrorClass::Config,
            Error::Internal(_) => ErrorClass::Internal,
            _ => ErrorClass::Data,
        }
    }
}
