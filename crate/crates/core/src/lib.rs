//! Online approximate-optimal station keeping for a planar (3-DOF) marine craft.
//!
//! The crate is split along the data flow of the controller:
//!
//! * [`dynamics`] – the craft model, its linear-in-parameters regressors and the
//!   residual (current-free) model used for policy synthesis.
//! * [`sim`] – fixed-step RK4 plant simulation under a current field.
//! * [`sysid`] – concurrent-learning state/parameter identifier and history stack.
//! * [`adp`] – quadratic value basis, Bellman error extrapolation, critic/actor laws.
//! * [`riccati`] – linearization at the station and a CARE solver used to seed
//!   the critic and to check it.
//! * [`config`], [`experiment`], [`report`] – the `collect → run` pipeline used by
//!   the `station-adp` binary.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adp;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod report;
pub mod riccati;
pub mod sim;
pub mod sysid;

pub use error::{Error, Result};
