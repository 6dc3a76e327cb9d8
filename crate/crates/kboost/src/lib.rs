//! Command line front end, file formats and the threaded runtime for `kboost-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod models;
pub mod report;
pub mod threaded;
pub mod wav;

pub use error::{Error, Result};
