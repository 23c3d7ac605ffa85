//! Command-line front end: configuration, dataset ingestion, the toy
//! dataset and the `toy`, `synth`, `train`, `infer`, `eval` and `bench` commands.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod outputs;
pub mod plot;
pub mod toy;

pub use config::RunConfig;
