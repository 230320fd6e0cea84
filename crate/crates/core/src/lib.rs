//! Quasistationary distributions and expected first exit times of
//! nonnegative Markov recursions `M' = φ(M)·Λ`.
//!
//! - [`kernel`]: transition kernels and inverse-CDF samplers.
//! - [`conditions`]: grid verifiers for the monotonicity hypotheses.
//! - [`qsd`]: killed-kernel discretization, Yaglom iteration, exit times.
//! - [`monte_carlo`]: exit-time simulation, geometric fit, coupled chains.
//! - [`experiments`]: model presets and threshold sweeps.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod error;
pub mod experiments;
pub mod format;
pub mod grid;
pub mod kernel;
pub mod monte_carlo;
pub mod normal;
pub mod qsd;
pub mod rng;

pub use error::{QsdError, Result};
