//! Robust pricing kernels under volatility uncertainty: the G-function,
//! monotone finite-difference solvers for the associated fully nonlinear
//! equations, G-SDE scenario simulation and the long-term decomposition
//! `D = e^{λt}·e^{u(X₀)−u(X_t)}·M·e^K`.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod decomp;
pub mod gcore;
pub mod io;
pub mod model;
pub mod pde;
pub mod sim;

pub use error::{Error, Result};
pub use gcore::{g_value, GEvaluation, UncertaintySet};
