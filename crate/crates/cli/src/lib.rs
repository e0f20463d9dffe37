//! Command-line front end: run configuration, CSV/SVG output and the
//! remote-denoiser wire protocol.

pub mod app;
pub mod config;
pub mod error;
pub mod report;
pub mod svg;
pub mod wire;

pub use app::{run, run_from, Cli, Failure};
pub use config::RunConfig;
pub use error::CliError;
pub use wire::{Endpoint, RemoteDenoiser};
