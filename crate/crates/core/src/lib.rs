//! Simulation and moment-scaling analysis for integrated supOU processes.
//!
//! A supOU process is driven by a Lévy basis with characteristic quadruple
//! `(a, b, μ, π)`. This crate simulates the integrated process
//! `X*(t) = ∫₀ᵗ X(u) du` exactly per Poisson atom, estimates the empirical
//! scaling function `τ(q) = lim log E|X*(t)|^q / log t`, and compares it with
//! the closed-form scaling functions, including the infinite-variance regime
//! where `τ` is only defined on `(0, γ)`.
//!
//! Modules:
//! - [`stable_dist`]: stable cumulants and samplers, Pareto and Gamma samplers.
//! - [`model`]: the quadruple, validity checks, centering and regime labels.
//! - [`theory`]: exact piecewise-linear scaling functions and limit-law parameters.
//! - [`sim`]: Monte-Carlo simulation of the three independent components.
//! - [`estimate`]: ensemble moments, log-log regression and breakpoint detection.
//! - [`cli`]: experiment configuration and the `tau`/`simulate`/`estimate`/`figure` commands.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimate;
pub mod model;
pub mod sim;
pub mod stable_dist;
pub mod theory;

pub use error::{Error, Result};
