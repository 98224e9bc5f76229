//! Bubble-based acoustic imaging.
//!
//! Resonances of small contrasting inclusions, their far-field signatures in a
//! heterogeneous background, full-wave reference solvers, and the inversion of
//! multi-frequency backscattering data for density and bulk modulus.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod error;
pub mod fields;
pub mod forward;
pub mod geometry;
pub mod invert;
pub mod media;
pub mod numerics;
pub mod oracle;
pub mod spectrum;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Point or vector in three dimensions.
pub type Vec3 = [f64; 3];

/// Far-field normalization used by every far-field quantity in the crate.
pub const FARFIELD_NORMALIZATION: &str = "lim |x| e^{-ik|x|} u^s";
