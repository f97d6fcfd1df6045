use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown constellation name `{0}`")]
    UnknownConstellation(String),

    #[error("invalid constellation: {0}")]
    InvalidConstellation(String),

    #[error("invalid SNR profile: {0}")]
    InvalidProfile(String),

    #[error("inconsistent detector specification: {0}")]
    InconsistentDetector(String),

    #[error("invalid system specification: {0}")]
    InvalidSpec(String),

    #[error("moment of order {0} is not supported (max 2)")]
    UnsupportedMoment(u32),

    #[error("value {value} is outside the open range ({lo}, {hi}) of the decision function")]
    OutOfDomain { value: f64, lo: f64, hi: f64 },

    #[error("quadrature for {what} did not stabilise: change {change:e} at {nodes} nodes")]
    Quadrature {
        what: &'static str,
        change: f64,
        nodes: usize,
    },

    #[error("load beta = 1 is singular for the decorrelator")]
    SingularLoad,

    #[error("fixed-point iteration did not converge (best residual {best_residual:e})")]
    NoConvergence { best_residual: f64 },

    #[error("exact enumeration over {users} users exceeds the cap of {cap}")]
    EnumerationCap { users: usize, cap: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("linear solve failed: {0}")]
    Singular(String),
}

pub type Result<T> = std::result::Result<T, Error>;
