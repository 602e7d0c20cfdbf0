//! Fixtures shared by the benchmarks.

use gvae_core::data::FactorSpec;
use gvae_core::lab::{Mode, RunConfig};
use gvae_core::Dataset;

pub fn default_dataset() -> Dataset {
    Dataset::generate(&FactorSpec::default()).expect("default spec is valid")
}

/// The default run config in the given mode with `latent_dim` = `d`.
pub fn run_config(mode: Mode, d: usize) -> RunConfig {
    RunConfig {
        mode,
        latent_dim: d,
        ..RunConfig::default()
    }
}
