//! Simulation and verification toolkit for kinetic (second-order) SDEs
//!
//! ```text
//! dX = V dt,   dV = b(t, X, V) dt + σ(t, X, V) dW
//! ```
//!
//! with rough drifts: mollified coefficient fields, the exact Gaussian
//! kernel of the degenerate Kolmogorov semigroup, a Duhamel–Picard solver
//! for the backward equation and the velocity change of variables built on
//! it, and Monte Carlo harnesses for flow, occupation-time and
//! Fokker–Planck estimates.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod acceptance;
pub mod coefficients;
pub mod csvfmt;
pub mod error;
pub mod flow_analysis;
pub mod fokker_planck;
pub mod function_spaces;
pub mod kolmogorov_kernel;
pub mod krylov_harness;
pub mod parallel;
pub mod quadrature;
pub mod rng;
pub mod sde_integrator;
pub mod zvonkin_solver;

pub use error::{Error, Result};
