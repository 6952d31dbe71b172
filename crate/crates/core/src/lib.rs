//! Solver for simple bilevel programs
//!
//! ```text
//! min f(x)  s.t.  x in argmin { g(y) : y in C }
//! ```
//!
//! with convex `f`, smooth convex `g` and a closed convex `C`. Each outer
//! iteration takes one projected-gradient step with Armijo backtracking on
//! `g`, which yields a level `alpha_k`, and then minimizes `f` over
//! `{x in C : g(x) <= alpha_k + eta_k}` for a summable sequence `eta_k`.
//!
//! The crate also ships the regularized projected-gradient baseline, a JSON
//! problem format, the bundled benchmark instances and randomized property
//! suites.

pub mod geometry;
pub mod oracles;
pub mod lower_step;
pub mod inner;
pub mod solver;
pub mod baseline;
pub mod problem;
pub mod experiments;
pub mod checks;

pub use geometry::{FeasibleSet, Sense, Vector};
pub use oracles::FunctionOracle;
pub use solver::{solve, Criterion, ProblemInstance, SolveResult, SolverConfig, Termination};
