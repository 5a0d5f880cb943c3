//! Model-free synthesis of linear network controllers.
//!
//! A network of `n` integrator units drives an `m`-dimensional second-order
//! plant through a fixed random projection. The feedback matrix of the
//! network is learned without a plant model, by episodic least-squares policy
//! iteration on the quadratic state-action value. A discounted LQR solver
//! gives the reference answer for testing, and [`experiment`] contains the
//! lesion and hyperparameter studies.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`). The aliases
//! at the crate root fix the scalar to `f64`; the `*32` variants exist for
//! single precision.

// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod network;
pub mod oracle;
pub mod plant;
pub mod scalar;
pub mod seed;
pub mod task;
pub mod value;

pub use adaptation::{run_adaptation, AdaptationConfig, AdaptationHistory, EpisodeRecord, PolicyIteration};
pub use error::{Error, Result};
pub use experiment::{run_lesion_experiment, run_sweep, LesionExperimentSpec, SweepKind, SweepSpec};
pub use network::{ExplorationConfig, Policy};
pub use oracle::{solve_discounted_riccati, RiccatiOptions, RiccatiSolution};
pub use plant::{AugmentedState, AugmentedSystem, LesionSpec, LesionTiming, PlantDynamics};
pub use scalar::Real;
pub use task::{SystemKind, TaskInstance, TaskSpec};
pub use value::{FeatureBasis, ValueEstimate};

pub type PlantDynamicsF64 = plant::PlantDynamics<f64>;
pub type AugmentedSystemF64 = plant::AugmentedSystem<f64>;
pub type AugmentedStateF64 = plant::AugmentedState<f64>;
pub type PolicyF64 = network::Policy<f64>;
pub type ValueEstimateF64 = value::ValueEstimate<f64>;
pub type AdaptationConfigF64 = adaptation::AdaptationConfig<f64>;
pub type TaskSpecF64 = task::TaskSpec<f64>;

pub type PlantDynamicsF32 = plant::PlantDynamics<f32>;
pub type AugmentedSystemF32 = plant::AugmentedSystem<f32>;
pub type AugmentedStateF32 = plant::AugmentedState<f32>;
pub type PolicyF32 = network::Policy<f32>;
pub type ValueEstimateF32 = value::ValueEstimate<f32>;
pub type AdaptationConfigF32 = adaptation::AdaptationConfig<f32>;
pub type TaskSpecF32 = task::TaskSpec<f32>;
