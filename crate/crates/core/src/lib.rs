//! Layer-graph IR, DLA compatibility checking, deconvolution rewriting,
//! GPU/DLA partition scheduling and a discrete-event pipeline simulator.

pub mod cli;
pub mod compat;
pub mod graph_ir;
pub mod metrics;
pub mod profile;
pub mod report;
pub mod rewrite;
pub mod scheduler;
pub mod simulator;
pub mod zoo;
