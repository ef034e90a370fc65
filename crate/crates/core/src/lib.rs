//! Evidence-gated benchmarking substrate for agent workloads.
//!
//! Runs execute simulated workload families under declared drivers, emit
//! schema-validated event logs, and pass through an admission gate before any
//! report consumes them.

pub mod cli;
pub mod demo;
pub mod drivers;
pub mod exec;
pub mod gate;
pub mod manifest;
pub mod replay;
pub mod report;
pub mod runner;
pub mod schema;
pub mod simenv;
pub mod study;
