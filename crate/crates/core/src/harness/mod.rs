//! Configuration, target models, synthetic data, file formats and the CLI.

pub mod cli;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod setup;
pub mod io;
pub mod models;

pub use config::RunConfig;
pub use data::{add_noise, synthesize_data, MeasuredDataSet, NoiseNorm, Provenance};
pub use models::{build_target_model, TargetModel};
pub use setup::Setup;
