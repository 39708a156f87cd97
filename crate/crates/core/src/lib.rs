//! Numerical laboratory for semilinear wave equations
//! `□u = ±|u|^k |∂_t u|^{l-1} ∂_t u`: time-ODE asymptotics, small-dispersion
//! approximation, fractional Sobolev norms, norm inflation and focusing
//! lifespan studies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod experiments;
pub mod model;
pub mod ode;
pub mod pde;
pub mod quad;
pub mod report;
pub mod spectral;

pub use error::{LabError, Result};
