//! Config-driven experiment runner behind the `mmvlab` binary.

pub mod config;
pub mod runner;
