//! Angiogram refinement pipeline.
//!
//! A single contrast angiogram is driven through a fixed 16-step refinement
//! sequence (one image-edit call per step, each reviewed by an operator),
//! ending in a binary vessel projection, a velocity-coded flow overlay with
//! stagnation zones, and a watertight STL tube model.
//!
//! Layout:
//!
//! - [`raster`]: grayscale/RGB rasters, binary masks, PNG codec, content hashes.
//! - [`image_ops`]: deterministic per-step image transforms.
//! - [`flowviz`]: distance transform, thinning, centerline graph,
//!   mass-conserving flow assignment, stagnation detection, overlay rendering.
//! - [`mesh3d`]: centerline tube lofting, mesh validation, STL I/O.
//! - [`backend`]: the image-edit backend interface (remote, local, mock).
//! - [`pipeline`]: step table, sessions, audit history, storage, replay.
//! - [`phantom`]: synthetic vessel phantoms for fixtures and demos.

pub mod backend;
pub mod flowviz;
pub mod image_ops;
pub mod mesh3d;
pub mod phantom;
pub mod pipeline;
pub mod raster;

pub use raster::{BinaryMask, ContentHash, GrayImage, Raster, RgbImage};
