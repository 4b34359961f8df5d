//! Access control and simulation for cabin-based transport lines.
//!
//! A line is a sequence of stations served by fixed-size cabins arriving
//! every `beta` seconds. This crate provides:
//!
//! * [`stability`]: scaled stability thresholds and the expected capacity
//!   recursion, generic over the number type ([`Scalar`]);
//! * [`control`]: the Gamora boarding-limit controller and the no-control and
//!   static-reservation baselines;
//! * [`sim`]: a seeded discrete-event simulator of one line;
//! * [`estimators`]: online arrival-rate and leaving-probability estimates;
//! * [`stats`], [`analysis`], [`experiment`]: multi-run aggregation,
//!   confidence intervals and experiment orchestration;
//! * [`io`]: configuration, profile and result file formats.

pub mod analysis;
pub mod control;
pub mod estimators;
pub mod experiment;
pub mod io;
pub mod model;
pub mod scalar;
pub mod sim;
pub mod stability;
pub mod stats;

pub use control::{ControlInput, ControllerPolicy};
pub use model::{BlockPartition, LineConfig, RateProfile, StationConfig};
pub use scalar::Scalar;
pub use stability::Rate;

/// Exact rational numbers for the closed-form routines.
pub type Exact = num_rational::BigRational;

pub type Thresholds = stability::ThresholdVector<f64>;
pub type ExactThresholds = stability::ThresholdVector<Exact>;
pub type Capacities = stability::CapacityVector<f64>;
pub type ExactCapacities = stability::CapacityVector<Exact>;
pub type Decision = model::ControlDecision<f64>;
pub type ExactDecision = model::ControlDecision<Exact>;
