//! First-order stochastic invariance checks for diffusions
//! `dX = b(X) dt + sigma(X) dW` on closed subsets of R^d.
//!
//! A closed set `D` is invariant iff, at every `x` in `D` and every first-order
//! normal `u` at `x`,
//!
//! ```text
//! C(x) u = 0
//! <u, b(x) - 1/2 sum_j DC^j(x) (C C^+)^j(x)> <= 0
//! ```
//!
//! where `C = sigma sigma^T` and `C^+` is the Moore-Penrose pseudoinverse.
//! The crate evaluates these conditions numerically on sampled boundaries
//! ([`checker::check_domain`]), in closed form for two-dimensional
//! affine/polynomial models ([`checker::check_canonical`] and friends),
//! checks the boundary non-attainment condition ([`nonattain`]) and runs
//! Euler-Maruyama ensembles as an empirical falsifier ([`sim`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checker;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod matcalc;
pub mod model;
pub mod nonattain;
pub mod poly;
pub mod sim;
pub mod spec;

pub use error::{Error, Result};
