use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid market parameters: {0}")]
    InvalidParams(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("horizon {horizon} exceeds the cap of {cap} for {what}")]
    HorizonTooLarge {
        horizon: usize,
        cap: usize,
        what: &'static str,
    },

    #[error("control field violation at k={k}, node={node}: {reason}")]
    ControlViolation {
        k: usize,
        node: usize,
        reason: String,
    },

    #[error("abscissa {a} outside domain [{lo}, {hi}]")]
    OutOfDomain { a: f64, lo: f64, hi: f64 },

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("internal invariant breached: {0}")]
    InvariantBreach(String),

    #[error("linear program is unbounded below")]
    Unbounded,

    #[error("solver failure: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;
