//! Multiple-scattering solver for anti-plane shear waves in a solid with
//! randomly placed cylindrical cavities, with Monte-Carlo sectional averaging
//! and extraction of an equivalent damped elastic medium.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod homogenize;
pub mod linalg;
pub mod pipeline;
pub mod scatter;
pub mod specfun;

pub use error::{Error, Result};

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
