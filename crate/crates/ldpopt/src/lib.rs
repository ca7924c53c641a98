//! Locally differentially private decentralized optimization.
//!
//! The crate covers graph topologies and message exchange ([`graphnet`]),
//! local objectives ([`objectives`]), noise schedules ([`noise`]), the
//! randomized ADMM and gradient schemes ([`optimizers`]), the privacy
//! accountant ([`privacy`]), additive secret sharing ([`secretshare`]) and
//! experiment orchestration ([`harness`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the precision to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod graphnet;
pub mod harness;
pub mod linalg;
pub mod noise;
pub mod objectives;
pub mod optimizers;
pub mod privacy;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod secretshare;

pub use error::{Error, Result};
pub use graphnet::{generate_random_graph, ExchangeMode, Topology};
pub use noise::{Mechanism, NoiseSchedule, ScheduleKind};
pub use objectives::{ConvexityProfile, ObjectiveKind, SensitivityProfile};
pub use optimizers::{AdmmParams, AdmmVariant, GdParams, PenaltyLaw, StepSize, ValidationOutcome};
pub use privacy::{PrivacyLedger, StepLossQuery};
pub use scalar::Scalar;
pub use secretshare::FixedPointCodec;

pub type Matrix = linalg::Matrix<f64>;
pub type ObjectiveSpec = objectives::ObjectiveSpec<f64>;
pub type AgentState = optimizers::AgentState<f64>;
pub type IterationRecord = optimizers::IterationRecord<f64>;
pub type Reference = optimizers::Reference<f64>;
pub type ConstraintSystem = optimizers::ConstraintSystem<f64>;
