//! Library side of the `tsr` binary: config parsing, the experiment and
//! sweep runners, and the subcommand handlers, kept here so integration
//! tests can drive them without spawning processes.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod summary;
pub mod sweep;
