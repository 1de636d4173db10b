//! Cost-aware provisioning of multi-service requests onto a pool of VM
//! instances, using a linear reward-penalty learning automaton per service.
//!
//! The automaton and scoring math are generic over [`Scalar`] (`f32`/`f64`);
//! the engine and simulator run in `f64`. Aliases for both widths follow.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod ingest;
pub mod learning;
pub mod matching;
pub mod report;
pub mod scalar;
pub mod scoring;
pub mod simulator;
pub mod workload;

pub use catalog::{builtin_catalog, InstanceId, Pool, Storage, VmInstance, VmType};
pub use engine::{
    provision, provision_with, Allocation, Outcome, ProvisionParams, RngStreams, Selector,
};
pub use error::{Error, Result};
pub use learning::{ConvergencePolicy, ConvergenceStatus};
pub use scalar::Scalar;
pub use simulator::{run, PoolSpec, RunResult, SimConfig, Strategy};
pub use workload::{Request, ServiceSpec, Workload};

pub type Automaton64 = learning::Automaton<f64>;
pub type Automaton32 = learning::Automaton<f32>;
pub type LearningParams64 = learning::LearningParams<f64>;
pub type LearningParams32 = learning::LearningParams<f32>;
pub type Weights64 = scoring::Weights<f64>;
pub type Weights32 = scoring::Weights<f32>;
pub type WeightPresets64 = scoring::WeightPresets<f64>;
pub type NormalizationBounds64 = scoring::NormalizationBounds<f64>;
pub type NormalizationBounds32 = scoring::NormalizationBounds<f32>;
pub type PerfScore64 = scoring::PerfScore<f64>;
pub type PerfScore32 = scoring::PerfScore<f32>;
