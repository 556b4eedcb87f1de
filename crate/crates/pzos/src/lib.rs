//! Gradient-free optimization for bilevel problems with equilibrium
//! constraints.
//!
//! A leader minimizes (or maximizes) a smooth cost f(x, y) whose second
//! argument is filled in by a black-box follower response y*(x), available
//! only through queries. Two algorithms are provided: partial zero-order
//! smoothing (`pzos`), which keeps the leader's partial gradients exact and
//! estimates only the follower Jacobian from two-point queries, and the
//! black-box baseline (`zos`) that applies the two-point estimator to the
//! whole composite. Around them: two benchmark problem families (toll
//! routing over Wardrop equilibria, defense-attack security games), an
//! exact 1-D stationarity analyzer, and an experiment harness that runs
//! paired-noise comparisons and writes CSV/TOML artifacts.

pub mod error;
pub mod estimators;
pub mod goldstein;
pub mod harness;
pub mod optimizer;
pub mod problem;
pub mod routing;
pub mod sampling;
pub mod security;
pub mod vecmath;

pub use error::{Error, Result};
