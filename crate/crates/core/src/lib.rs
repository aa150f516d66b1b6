//! Resolvent calculus for monotone operators on small dense spaces.
//!
//! The crate models operators as expression trees over a library of atoms,
//! computes resolvents structurally, and ships the estimation tools used to
//! compare operators: graph sampling, graph distances, Hausdorff estimates,
//! Fitzpatrick inequality checks, a definition-level inclusion oracle, and
//! parameter sweeps. A command line interface runs experiments from JSON
//! configuration files and reproduces the bundled studies.

pub mod analysis;
pub mod calculus;
pub mod cli;
pub mod linalg;
pub mod operators;
pub mod rng;
