//! Plane-sweep multi-view reconstruction kernels.
//!
//! This crate holds the pure numerical core: pinhole/SE(3) geometry and
//! bilinear warping, 3×3 SSIM photometric error, plane-sweep cost volumes
//! with consensus weighting and moving-object attenuation, winner-take-all
//! depth extraction, auxiliary moving-object mask generation, the
//! semi-supervised depth/mask loss stack with analytic gradients, depth and
//! mask evaluation metrics, and a deterministic synthetic scene renderer
//! that provides ground truth for all of the above.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! thread-parallel drivers live in the `planesweep` crate.
//!
//! # Conventions
//!
//! * Images are planar `f64` intensity maps in `[0, 1]`.
//! * Pixel centers sit at integer coordinates; `(0, 0)` is the top-left pixel.
//! * Poses are world-to-camera. The pose mapping keyframe camera coordinates
//!   into a source camera is `source.pose ∘ key.pose⁻¹`.
//! * Depth hypotheses and depth maps are inverse depths (1/m).

#![no_std]
// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod costvolume;
pub mod depth;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod losses;
pub mod mask;
pub mod photometric;
pub mod synth;

mod math;

pub use error::{Error, Result};
pub use grid::{Grid, Image};
