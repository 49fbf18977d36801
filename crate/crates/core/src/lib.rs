//! Multi-KB evidence retrieval: density-aware KB routing, consolidation,
//! alignment-graph fusion and coverage-aware packing.

pub mod aligngraph;
pub mod artifacts;
pub mod consolidate;
pub mod corpus;
pub mod daks;
pub mod error;
pub mod evalkit;
pub mod packer;
pub mod pipeline;
pub mod scorers;

pub use error::{Error, Result};
