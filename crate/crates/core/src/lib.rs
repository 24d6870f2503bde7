//! HARP: dynamic agent grouping with a permutation-invariant group critic and
//! human-assisted deployment, on a small deterministic grid battle.
//!
//! The numeric core is generic over [`scalar::Scalar`]; the aliases below fix
//! the scalar for the common cases. Training, deployment and checkpoints run
//! in `f64`.

pub mod deploy;
pub mod env;
pub mod error;
pub mod groupmix;
pub mod grouping;
pub mod numcore;
pub mod pigc;
pub mod scalar;

pub use error::{HarpError, Result};

pub type Tensor = numcore::Tensor<f64>;
pub type Tensor32 = numcore::Tensor<f32>;
pub type ParameterStore = numcore::ParameterStore<f64>;
pub type ParameterStore32 = numcore::ParameterStore<f32>;
pub type Graph = numcore::Graph<f64>;
pub type Graph32 = numcore::Graph<f32>;
pub type GruState = numcore::GruState<f64>;
pub type GroupQ = groupmix::GroupQ<f64>;
pub type CriticOutput = pigc::CriticOutput<f64>;
pub type ContributionWeights = grouping::ContributionWeights<f64>;
