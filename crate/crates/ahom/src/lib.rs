//! Homogenized energy densities under first-order linear PDE constraints.
//!
//! Given a constant-coefficient operator A = sum_i A^(i) d/dx_i of constant
//! rank and an integrand f(x, zeta) with linear growth, this crate computes
//! the homogenized density
//!
//! ```text
//! f_hom(b) = inf over R of
//!            inf { avg over RQ of f(x, b + w(x)) :
//!                  w RQ-periodic, A w = 0, mean w = 0 }
//! ```
//!
//! by spectral projection onto the A-free subspace and projected
//! (sub)gradient descent, estimates recession functions t -> f(t b)/t, and
//! evaluates the induced functional on vector measures (density plus atoms
//! and surface pieces) with the recession density on the singular part.

pub mod error;
pub mod fields;
pub mod integrand;
pub mod operator;
pub mod projection;

pub use error::{Error, Result};
pub use fields::{apply_a, Grid, PeriodicField, Spectrum};
pub use projection::{build_plan, ProjectorPlan};
pub use operator::{Builtin, ConeReport, Operator};
