//! Pipeline for interpreting two-panel contrast images: agent-based visual
//! decoupling, chain-of-thought reasoning with uncertainty-guided
//! temperature selection, and an offline evaluation harness.

pub mod backends;
pub mod cli;
pub mod core;
pub mod cot;
pub mod dataset;
pub mod decouple;
pub mod metrics;
pub mod uncertainty;
