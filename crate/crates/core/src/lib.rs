//! Pseudospectral laboratory for the line bundle mean curvature flow
//! `∂u/∂t = θ(F̂ + ∂∂̄u) − θ̂` on flat complex tori.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohomology;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod phase;

pub use error::{DhymError, Result};
