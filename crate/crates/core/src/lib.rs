//! Finite-dimensional laboratory for almost-uniform convergence of
//! noncommutative martingales.
//!
//! The crate builds tracial matrix algebras, Schatten quasi-norms,
//! conditional expectations for a block filtration, the explicit
//! counterexample objects `X_N`, `T_n`, `A_N = B_N + C_N`, the maximal
//! rearrangement `μ_t^c` as a projection-constrained minimax problem, and
//! ergodic-average constructions built from the same filtration.

pub mod algebra;
pub mod cli;
pub mod condexp;
pub mod counterexample;
pub mod ergodic;
pub mod error;
pub mod linalg;
pub mod rearrangement;
pub mod schatten;

pub use algebra::{Operator, Projection, TraceMode, TracialAlgebra};
pub use error::{Error, Result};
pub use schatten::PExponent;
