//! Ground states of Bose-Einstein condensates with the nonconforming EQ1rot
//! element and the conforming Q2 element on rectangles.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod assembly;
pub mod config;
pub mod elements;
pub mod error;
pub mod experiment;
pub mod field;
pub mod gpe;
pub mod linalg;
pub mod mesh;
pub mod selftest;

pub use error::{Error, Result};
