//! Numerical dynamics of a susceptible–infectious–predator model in which
//! predators induce two kinds of fear (suppressed prey births and reduced
//! disease transmission) and susceptible prey aggregate.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: parameters, state, vector field and analytic Jacobian;
//! - [`equilibria`]: the equilibria E1–E4 with feasibility checks;
//! - [`stability`]: characteristic cubic, eigenvalues and stability verdicts;
//! - [`dynamics`]: adaptive integration with extinction and convergence events;
//! - [`continuation`]: equilibrium branches, codimension-one and -two points;
//! - [`harness`]: scenario files, sweeps and file output used by the CLI.

pub mod error;
pub mod model;
pub mod equilibria;
pub mod stability;
pub mod dynamics;
pub mod continuation;
pub mod harness;

pub use error::{Error, Result};
pub use model::{fear, jacobian, vector_field, ParamName, ParamSet, State, VectorFieldValue};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/equilibria.md")]
    mod equilibria {}
    #[doc = include_str!("../../../book/src/stability.md")]
    mod stability {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/continuation.md")]
    mod continuation {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
