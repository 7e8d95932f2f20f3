//! Score-aware policy gradients for Markov decision processes whose
//! stationary distributions form exponential families.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the `*F64`
//! aliases below fix the common double-precision case.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod environments;
pub mod error;
pub mod estimators;
pub mod exact_eval;
pub mod exp_family;
pub mod linalg;
pub mod optimizer;
pub mod scalar;

pub use environments::ising::{Ising, IsingParams, IsingState};
pub use environments::load_balancing::{LbParams, LoadBalancing, Occupancy};
pub use environments::mm1::{Mm1, Mm1Params};
pub use environments::Environment;
pub use error::{Error, Result};
pub use estimators::{Batch, CriticState, GradientEstimate, MemoryState, Transition};
pub use exact_eval::{BuzenArray, StationaryDistribution};
pub use exp_family::{ActionDistribution, BlockPolicy, ExpFamily, Policy, PolicyParams};
pub use linalg::Matrix;
pub use optimizer::{
    EpochRecord, Estimator, RecordStride, RegularizerConfig, RunOptions, RunOutcome, RunRecord, ScheduleConfig,
};
pub use scalar::Scalar;

pub type PolicyParamsF64 = PolicyParams<f64>;
pub type Mm1F64 = Mm1<f64>;
pub type Mm1ParamsF64 = Mm1Params<f64>;
pub type LoadBalancingF64 = LoadBalancing<f64>;
pub type LbParamsF64 = LbParams<f64>;
pub type IsingF64 = Ising<f64>;
pub type IsingParamsF64 = IsingParams<f64>;
pub type ScheduleConfigF64 = ScheduleConfig<f64>;
pub type RegularizerConfigF64 = RegularizerConfig<f64>;
pub type EstimatorF64 = Estimator<f64>;
pub type BuzenArrayF64 = BuzenArray<f64>;

pub type PolicyParamsF32 = PolicyParams<f32>;
pub type Mm1F32 = Mm1<f32>;
pub type LoadBalancingF32 = LoadBalancing<f32>;
pub type IsingF32 = Ising<f32>;
