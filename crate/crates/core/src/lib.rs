//! Spectral laboratory for semilinear weakly hyperbolic equations with
//! time-dependent coefficients: quasi-symmetrizers, two-regime weights,
//! weighted energies, super-energies and analyticity-radius estimation.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod energy;
pub mod equation;
pub mod exprdsl;
pub mod json;
pub mod quasisym;
pub mod radius;
pub mod spectral;
pub mod symbol;
