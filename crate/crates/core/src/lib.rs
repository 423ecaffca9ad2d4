//! Training engine for parametric dynamical systems with three backward-pass
//! algorithms: exact full-sequence BPTT, fixed-truncation BPTT, and
//! anticipated reweighted truncated BPTT (ARTBP), which randomizes truncation
//! points and compensates each non-truncated backward step by 1/(1-c_t) so
//! that the gradient estimate is unbiased in expectation over truncations.
//!
//! The crate also ships the verification harness that certifies unbiasedness
//! empirically (Monte-Carlo z-tests against exact BPTT), the influence
//! balancing experiment, and a desk-scale character-level language model.

// Indexed loops are kept where paired indices make the adjoint algebra
// easier to follow.
#![allow(clippy::needless_range_loop)]

pub mod corpus;
pub mod dynsys;
pub mod engine;
pub mod gradcheck;
pub mod gradients;
pub mod harness;
pub mod models;
pub mod rng;
pub mod schedule;
pub mod trainer;

pub use dynsys::{DynError, DynamicalSystem, ObservedStep, ParameterVector, StateVector, Trajectory};
pub use gradients::{AdjointSequence, GradientEstimate};
pub use schedule::{SchedulePolicy, TruncationSchedule};
