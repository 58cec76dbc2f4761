use thiserror::Error;

/// Errors raised by the numerical and channel-model layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Argument outside the domain of a function.
    #[error("{func}: {msg}")]
    Domain { func: &'static str, msg: String },

    /// The two gamma-pole families of a Mellin-Barnes integrand cannot be
    /// separated by a vertical line.
    #[error("pole families collide: left pole at {left}, right pole at {right} ({detail})")]
    PoleCollision {
        left: f64,
        right: f64,
        detail: String,
    },

    /// Contour quadrature did not meet its tolerance after adaptive extension.
    #[error("{what} did not converge: partial value {partial:e}, error bound {bound:e}")]
    Convergence {
        what: String,
        partial: f64,
        bound: f64,
    },

    /// A value that must be a probability or otherwise bounded fell outside
    /// its range by more than the accepted slack.
    #[error("numerical consistency violated: {0}")]
    Consistency(String),

    /// A series truncation cannot meet its accuracy budget.
    #[error("accuracy budget missed: {msg}")]
    Accuracy { msg: String, recommended: usize },

    /// Table lookup failed.
    #[error("no EGG table row for {key}; available: {available}")]
    Lookup { key: String, available: String },

    /// Malformed table or configuration input.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Optimization has no interior stationary point.
    #[error("no interior optimum: derivative sign {lo_sign} at {lo:.6} and {hi_sign} at {hi:.6}")]
    NoInteriorOptimum {
        lo: f64,
        hi: f64,
        lo_sign: f64,
        hi_sign: f64,
    },

    /// Asymptotic exponent sets coincide; carried for callers that refuse the
    /// perturbation fallback.
    #[error("degenerate asymptotic exponents: {0}")]
    Degenerate(String),

    #[error("invalid parameter {field}: {msg}")]
    InvalidParameter { field: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(func: &'static str, msg: impl Into<String>) -> Error {
    Error::Domain {
        func,
        msg: msg.into(),
    }
}

pub(crate) fn invalid(field: &'static str, msg: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        msg: msg.into(),
    }
}
