//! File formats, configuration, parallel runners and the command-line tool
//! built on `proprio-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod lvid;
pub mod manifest;
pub mod report;
pub mod runner;
