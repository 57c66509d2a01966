use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("chain is not ergodic: {0}")]
    NotErgodic(String),

    #[error("no Doeblin certificate found for n0 <= {n_max}")]
    NoDoeblinWithinHorizon { n_max: usize },

    #[error("matrix is not irreducible")]
    NotIrreducible,

    #[error("transition structure is not primitive")]
    NotPrimitive,

    #[error("{what} did not converge after {iterations} iterations (last value {last})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last: f64,
    },

    #[error("supremum unbounded at u = {u}: u lies outside the range of the derivative")]
    SupremumUnbounded { u: f64 },

    #[error("{what} too large: {size} exceeds cap {cap}")]
    TooLarge {
        what: &'static str,
        size: f64,
        cap: f64,
    },

    #[error("strategy requires k = {expected}, got k = {got}")]
    WrongK { expected: usize, got: usize },

    #[error("degenerate variance: every per-level variance vanishes")]
    Degenerate,

    #[error("integration step unstable at t = {t}: error estimate {estimate}")]
    StepUnstable { t: f64, estimate: f64 },

    #[error("horizon overflow: {required} positions required, cap is {cap}")]
    HorizonOverflow { required: f64, cap: f64 },
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
