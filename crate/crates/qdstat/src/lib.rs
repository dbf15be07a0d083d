//! Command-line tools and file formats around [`qdstat_core`].

pub mod cli;
pub mod config;
pub mod io;
pub mod run;

pub use qdstat_core;
