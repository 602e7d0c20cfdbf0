//! Groupified VAEs at desk scale: a small reverse-mode core, a synthetic
//! factor dataset, VAE objectives, cyclic-group latent structure with its
//! isomorphism losses, disentanglement metrics and an experiment harness.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod groupcheck;
pub mod groupify;
pub mod lab;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod vae;

pub use autodiff::{Tape, Var};
pub use data::{Dataset, FactorIndex, FactorSpec, Observation};
pub use error::{Error, Result};
pub use groupify::{GroupElement, GroupModel, GroupifyConfig, OracleModel};
pub use metrics::{MetricConfig, MetricReport, Representation};
pub use groupcheck::{CyclicTuple, ResidualReport};
pub use nn::{Activation, GradResult, ParamStore, Rng};
pub use tensor::{Real, Tensor};
pub use vae::{Architecture, DecoderInput, Objective, VaeConfig, VaeModel};
