//! Non-neural core of a multi-frame LiDAR scene-flow pipeline: sparse voxel
//! temporal-delta features, supervision losses with analytic gradients,
//! evaluation metrics, a deterministic synthetic scene generator, and a
//! sparse-vs-dense benchmark harness.

// `!(x <= tol)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod delta;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod synth;
pub mod validation;
pub mod voxel;

pub use error::{Error, Result};
