//! Batch tooling for the interacting urns design: configuration files,
//! parallel Monte Carlo, trace files and the `iud` command line.

pub mod cli;
pub mod config;
pub mod harness;
pub mod output;
pub mod trace_file;
