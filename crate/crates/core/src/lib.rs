//! Topology distillation for recommender systems.
//!
//! A BPR matrix-factorization student learns from a frozen, larger teacher
//! through hint regression, distillation experts, or by matching the
//! similarity structure (topology) of the teacher's embedding space, either
//! in full or hierarchically through preference groups.

pub mod cli;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod model;
pub mod numkernel;
pub mod seed;

pub use error::{Error, Result};
