//! Synthetic benchmark, training harness and experiment drivers for the
//! hierarchical uncertainty retrieval model in `hud-core`.

pub mod checkpoint;
pub mod config;
pub mod dump;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod metrics;
pub mod synthbench;
pub mod train;
