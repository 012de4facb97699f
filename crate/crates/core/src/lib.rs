//! Stochastic particle simulation of kinetic annihilation with Kac-type
//! binary collisions, together with estimators of rescaled correlation
//! functions and reference solutions for the limit equations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dynamics;
pub mod ensemble;
pub mod kernels;
pub mod limit_models;
pub mod pipeline;
pub mod rng;
pub mod selfsim;
pub mod stats;
pub mod testfn;
pub mod vec3;
pub mod verify;

pub use config::{ConfigError, KernelConfig, Observable, RunConfig};
pub use dynamics::{
    elastic_collide, simulate, simulate_with, DynamicsError, Event, EventKind, Mode, Snapshot,
    SystemState, Trajectory,
};
pub use ensemble::{
    bbgky_residual, chaos_defect, estimate_correlation, run_ensemble, ChaosDefect,
    EmpiricalCorrelation, Ensemble, EnsembleError, EnsembleSpec, InitialLaw, ResidualSettings,
};
pub use kernels::{CollisionKernel, KernelError, KernelFamily, SigmaTable};
pub use limit_models::{DeathChainDistribution, OracleCurve};
pub use pipeline::PipelineError;
pub use selfsim::{CheckMode, SelfSimilarFrame};
pub use stats::Estimate;
pub use testfn::{TestFunction, Unary};
pub use vec3::Vec3;
