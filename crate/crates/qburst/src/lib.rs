//! qburst-lab: simulator and analysis toolkit for radiation-induced
//! correlated errors in multi-qubit superconducting chips.
//!
//! The crate generates synthetic shot streams under a two-level rate model
//! driven by pulsed particle impacts, then runs the full detection and
//! fitting pipeline (event classification, alignment/averaging, global
//! rate-model fits, Ramsey detuning extraction, Poisson fluence estimation)
//! so that parameter recovery can be checked against the injected ground
//! truth.
//!
//! Numeric kernels (`ode`, `ratemodel`, the fitting primitives, `fluence`)
//! are generic over [`num::Scalar`] (`f32` or `f64`); everything operates on
//! [`Real`] (= `f64`) by default.

pub mod config;
pub mod detection;
pub mod error;
pub mod fitting;
pub mod fluence;
pub mod num;
pub mod ode;
pub mod pipeline;
pub mod ratemodel;
pub mod report;
pub mod rng;
pub mod shotfile;
pub mod simulator;

/// Default concrete scalar for the whole toolkit.
pub type Real = f64;

pub use error::{Error, Result};
pub use ratemodel::{RateParams, SpamParams, StateVector};
pub use shotfile::{Prep, RunHeader, ShotRecord};
