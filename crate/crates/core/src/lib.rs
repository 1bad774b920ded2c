//! Lure-and-reveal exposure of stealthy deception attacks.
//!
//! A defender fuses a reliable dead-reckoning sensor with a suspicious
//! position sensor through an error-state Kalman filter. When the residual
//! statistic enters the suspect band, the filter stops trusting the suspicious
//! sensor and small optimized input shakes are injected so that an attacker
//! who is replaying a model of the system can no longer hide.
//!
//! Modules follow the data flow of one closed-loop step:
//! [`lin_model`] → [`controller`] → [`estimator`] → [`detector`], with
//! [`adversary`] tampering with measurements, [`exposure`] producing the
//! shakes and bounds, [`harness`] orchestrating episodes and [`cli`] exposing
//! the batch surface.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod cli;
pub mod controller;
pub mod detector;
pub mod error;
pub mod estimator;
pub mod exposure;
pub mod harness;
pub mod lin_model;

pub use error::{Error, Result};

/// Dense column vector used for states, inputs and measurements.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix.
pub type Matrix = nalgebra::DMatrix<f64>;
