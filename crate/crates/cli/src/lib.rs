//! Library side of the `mprobe` binary: config schema, experiment runner and
//! report writers.

pub mod config;
pub mod report;
pub mod runner;
