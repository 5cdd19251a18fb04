//! Numerical toolkit for fourth-order nonlinear elliptic equations in
//! double-divergence form, `∫ a^{ij,kl}(D²u) u_ij η_kl dx = 0`.
//!
//! The crate builds the coefficient tensors of Hessian functionals
//! `F(D²u) = f((D²u)ᵀD²u)`, certifies their ellipticity on regions of
//! Hessian space, solves the constant-coefficient and variational problems
//! on uniform grids, and measures the quantities a regularity bootstrap
//! relies on: difference quotients, frozen-coefficient splits, Campanato
//! decay and Hölder seminorms.

// `!(x > 0.0)` is used deliberately so that NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cc_solver;
pub mod cli;
pub mod coefficients;
pub mod diagnostics;
pub mod error;
pub mod fields;
pub mod functionals;
mod linalg;
pub mod ellipticity;
pub mod rng;
pub mod symtensor;
pub mod var_solver;

pub use error::{Error, Result};
