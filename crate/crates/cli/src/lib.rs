//! Command line driver: configuration, runs, oracle comparisons, scattering
//! extraction and reports.

pub mod config;
pub mod error;
pub mod format;
pub mod manifest;
pub mod oracle;
pub mod output;
pub mod report;
pub mod run;
pub mod scatter;

pub use config::RunConfig;
pub use error::CliError;
