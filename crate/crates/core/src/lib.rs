//! Memory-augmented neural construction solvers for routing problems.
//!
//! The crate provides the TSP/CVRP construction environment, a small
//! attention policy with hand-written backward passes, the per-node memory
//! whose entries are turned into correction logits by a tiny MLP, the
//! budgeted training loop for that MLP, and search strategies (sampling,
//! memory-based search, gradient-based active search) to compare them.

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod experiments;
pub mod instances;
pub mod memory;
pub mod nn;
pub mod optim;
pub mod par;
pub mod policy;
pub mod rng;
pub mod search;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
