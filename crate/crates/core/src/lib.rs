//! Cost model, attention-reuse optimizer and functional crossbar simulator
//! for transformer encoders mapped onto in-memory-computing crossbars.

pub mod config;
pub mod cost_model;
pub mod error;
pub mod func_sim;
pub mod presets;
pub mod registry;
pub mod report;
pub mod reuse_opt;
pub mod workload;
pub mod xbar_map;

pub use error::{Error, Result};
