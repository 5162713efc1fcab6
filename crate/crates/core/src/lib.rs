//! Polynomial chaos based synthesis of gain-scheduled state feedback for
//! linear parameter-varying plants.
//!
//! The scheduling parameter is treated as a random variable. The closed loop
//! is projected onto an orthogonal polynomial basis (stochastic Galerkin),
//! and exponential mean-square stability is certified by LMI feasibility
//! problems in the Lyapunov/gain variables `Y = P^{-1}`, `W = V_K Y`.

// `!(x > 0.0)` is used deliberately so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cli;
pub mod error;
pub mod galerkin;
pub mod lmi;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};
