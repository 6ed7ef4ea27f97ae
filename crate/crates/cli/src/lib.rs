//! Trace files, opacity reports and the scenario runner behind the `otm` binary.

pub mod dot;
pub mod human;
pub mod runner;
pub mod trace;
