//! FLOP-instrumented memory-network question answering with adaptive hop
//! gating, answer-layer pruning and zero-skipping.

pub mod babi;
pub mod cli;
pub mod cost;
pub mod error;
pub mod eval;
pub mod gate;
pub mod model;
pub mod pipeline;
pub mod prune;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
