//! Quantifying how well reaching a state set predicts reaching a terminal
//! effect set in a Markov decision process.
//!
//! The crate computes confusion-matrix quality measures (precision, recall,
//! f-score, Matthews correlation) under single memoryless policies, averages
//! them uniformly over the whole policy polytope by Monte-Carlo sampling,
//! estimates strict/global causal volumes, and decides the existence of
//! strict/global probability-raising policies with exactly verified
//! witnesses.
//!
//! Modules follow the pipeline:
//! - [`model`]: MDP/query/policy types and the JSON text format;
//! - [`graph`]: qualitative analyses (reachability, MECs, sure avoidance);
//! - [`solve`]: quantitative solvers (reachability under a policy, optimal
//!   reachability, state-action frequencies);
//! - [`transform`]: the two-copy, canonical and star model transformations;
//! - [`quality`]: confusion matrices, measures, polytope sampling,
//!   Monte-Carlo averaging and causal volumes;
//! - [`prcheck`]: decision procedures for probability-raising policies with
//!   witness verification.

pub mod error;
pub mod graph;
mod linalg;
pub mod model;
pub mod num;
pub mod prcheck;
pub mod quality;
pub mod solve;
pub mod transform;

pub use error::{Error, Result};
