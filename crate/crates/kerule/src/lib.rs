//! File formats, parallel execution and the command-line front end.

pub mod calibfile;
pub mod cli;
pub mod error;
pub mod exec;
pub mod files;
pub mod ingest;
pub mod llm;
pub mod manifest;
pub mod report;
pub mod searchout;

pub use error::{Error, Result};
pub use kerule_core as core;
