//! Compositional part-based volume renderer.
//!
//! A portrait scene is described by K semantic parts, each carrying a 2D
//! feature map, a depth map and a non-negative density map. Every part is
//! lifted into a 3D volume by spreading its 2D values along the depth axis
//! with a weight that peaks at the predicted depth (soft unprojection). The
//! lifted parts are fused by summation and rendered with NeRF-style
//! transmittance weighting into a posed 2D feature map plus a per-part
//! semantic mask stack.
//!
//! The crate is organized around that pipeline:
//!
//! * [`part`] — per-part 2D inputs, the relative/absolute depth convention,
//!   a procedural portrait generator and the on-disk part-set format
//! * [`lifting`] — depth-guided 2D-to-3D lifting, lazy and materialized
//!   volumes, fusion and trilinear sampling
//! * [`camera`] — orbit camera, pose sampling, ray generation and per-ray
//!   sample placement
//! * [`render`] — transmittance weights and feature-map rendering
//! * [`mask`] — the 3D-aware semantic mask renderer and its uniform-weight
//!   ablation, plus high-resolution mask composition
//! * [`analysis`] — depth smoothness regularizer with analytic gradient,
//!   a finite-difference checking harness and difference-map metrics
//! * [`img`] — minimal binary PPM/PGM reader/writer
//!
//! All evaluation is lazy by default: volumes are views over the 2D maps and
//! voxels are computed on demand, so a 13-part scene never allocates the
//! ~1.7 GB a materialized representation would need. Every type is immutable
//! after construction and rendering is deterministic regardless of thread
//! count.

pub mod analysis;
pub mod camera;
pub mod error;
pub mod img;
pub mod lifting;
pub mod mask;
pub mod part;
pub mod render;

pub(crate) mod math;

pub use error::{Error, Result};
