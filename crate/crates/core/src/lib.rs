//! Numerical toolkit for local zeta functions `Z(s) = int |f|^s phi` of
//! monomials perturbed by flat terms such as `x^a y^b + x^(a-q) y^b e^(-1/|y|^p)`.
//!
//! * [`flatcore`]: flat exponentials and the maps that split the box.
//! * [`quad`]: adaptive Gauss-Kronrod quadrature.
//! * [`constants`]: the limit constants with Gamma-function cross-checks.
//! * [`asym1d`]: one-dimensional parametric integrals and their expansions.
//! * [`zeta`]: direct and analytically continued two-dimensional integrals.
//! * [`verify`]: limit predictions, sampling and extrapolation.

pub mod asym1d;
pub mod constants;
pub mod error;
pub mod flatcore;
pub mod quad;
pub mod verify;
pub mod zeta;

pub use error::{Error, Result};
