//! File formats, ingestion, export and the command line around
//! [`percheck_core`].

pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod fixture;
pub mod ingest;
pub mod manifest;
pub mod parallel;

pub use error::{CliError, Result};
