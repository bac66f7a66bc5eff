//! Numerical laboratory for the damped wave equation
//! `u_tt + H0 u + a(x) u_t = 0`, `H0 = -div(G(x) grad)`, on a truncated grid.
//!
//! The crate is organised bottom-up:
//!
//! - [`medium`]: analytic coefficient fields and their decay checks,
//! - [`discretize`]: sparse grid operators,
//! - [`resolvent`]: `R(z) = (H0 - i z a - z^2)^{-1}`, its derivatives and weighted norms,
//! - [`sweep`]: norm estimates along frequency paths and power-law fits,
//! - [`evolve`]: time stepping, energy traces and transform checks,
//! - [`flow`]: Hamiltonian flow, trapping, escape functions and commutator checks.

pub mod discretize;
pub mod error;
pub mod evolve;
pub mod flow;
pub mod medium;
pub mod resolvent;
pub mod sparse;
pub mod sweep;

pub use discretize::{DiscreteOperator, Grid, Role, SpongeSpec};
pub use error::{LabError, Result};
pub use medium::{MediumSpec, MetricDensitySpec, MetricTensor};
pub use sparse::{CsrMatrix, C64};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
