use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("integral diverges: {0}")]
    Divergent(String),

    #[error("evaluation point is at or too close to a pole: {0}")]
    Pole(String),

    #[error("quadrature did not converge: {0}")]
    NonConvergence(String),

    #[error("closed form {oracle} and quadrature {quadrature} disagree for {what}")]
    OracleMismatch {
        what: String,
        oracle: f64,
        quadrature: f64,
    },

    #[error("integration region is empty: {0}")]
    EmptyRegion(String),

    #[error("expansion depth {requested} exceeds the supported truncation {max}")]
    UnsupportedDepth { requested: usize, max: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
