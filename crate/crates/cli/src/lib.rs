//! Command-line tool and local HTTP service for the lineage pipeline.

pub mod commands;
pub mod error;
pub mod jobs;
pub mod server;
pub mod settings;

pub use error::CliError;
pub use settings::Settings;
