use thiserror::Error;

use crate::model::State;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("unknown parameter name `{0}`")]
    UnknownParameter(String),

    #[error("state has a negative component: {0:?}")]
    NegativeState(State),

    /// Linearization requested at S = 0, where S^(r-1) blows up.
    #[error("Jacobian is singular at S = 0 (state {0:?})")]
    SingularState(State),

    #[error("{kind} is not feasible: {reason}")]
    Infeasible { kind: &'static str, reason: String },

    #[error("no positive predator root for the infectious-free equilibrium")]
    NoPositiveRoot,

    #[error("no interior equilibrium in the scanned bracket")]
    NoInteriorEquilibrium,

    #[error("step size underflow at t = {t} (h = {h})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("ambiguous endpoint: matches both {0} and {1}")]
    AmbiguousEndpoint(String, String),

    #[error("seed residual {0:e} exceeds tolerance")]
    SeedResidual(f64),

    #[error("corrector diverged at a fold with step {0:e} at the step floor")]
    FoldTurn(f64),

    #[error("bordered Jacobian of the augmented system is singular")]
    AugmentedSingular,

    #[error("degenerate Hopf point: |l1| = {0:e}")]
    DegenerateHopf(f64),

    #[error("not a Hopf point: {0}")]
    NotHopf(String),

    #[error("seed is not a saddle-node point")]
    NotSaddleNode,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("golden mismatch: {0}")]
    GoldenMismatch(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
