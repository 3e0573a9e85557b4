//! Batch front-end for the isogauss experiments: strict JSON configs in,
//! full-precision CSVs, optional SVG plots and a hashed manifest out.

pub mod config;
pub mod error;
pub mod plot;
pub mod run;

pub use config::{parse_config, parse_config_str, parse_seeds, Command, ExperimentConfig};
pub use error::{Error, Result};
pub use run::{run, verify_manifest, RunManifest, RunReport};
