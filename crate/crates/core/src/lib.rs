//! Non-neural machinery for sparse-measurement depth completion.
//!
//! - [`camera`]: pinhole model, poses, reprojection, canonical inverse-depth encoding
//! - [`mesh`], [`bvh`], [`render`]: mesh loading, ray casting, synthetic dataset generation
//! - [`sparse`]: simulated sparse measurements and the patch-filled depth channel
//! - [`losses`]: scale-invariant and gradient-matching losses with analytic gradients
//! - [`embed`]: 4-channel patch embedding built from 3-channel weights
//! - [`eval`]: metrics, least-squares affine lifting and rank aggregation

// NaN must fail validity checks, so `!(x > 0.0)` is intended throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bvh;
pub mod camera;
pub mod config;
pub mod embed;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod mesh;
pub mod raster;
pub mod render;
pub mod seed;
pub mod sparse;

pub use error::{Error, Result};
