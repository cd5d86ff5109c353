//! Configuration, orchestration and file output for the `fpn` binary.

pub mod app;
pub mod config;
pub mod error;
pub mod output;
