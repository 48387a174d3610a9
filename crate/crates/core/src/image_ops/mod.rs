//! Deterministic image transforms backing the local pipeline steps.
//!
//! Every function here is pure: the same input always yields bit-identical
//! output and output dimensions always match the input. Intensity maps use
//! round-half-up. Mask operations use 8-connected foreground and
//! 4-connected background.

mod contrast;
mod morphology;
mod threshold;

pub use contrast::{enhance_contrast, invert, median3, normalize};
pub use morphology::{
    close, connected_components, dilate, erode, euler_number, fill_holes, keep_dominant_components,
    keep_largest_component, majority_filter, open, remove_small_components, smooth_boundary,
    Components, Connectivity,
};
pub use threshold::{detect_polarity, otsu_threshold, Polarity};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImageOpsError {
    #[error("contrast tile size {0} is below the minimum of 8 pixels")]
    TileTooSmall(u32),
    #[error("clip fraction {0} outside (0, 1]")]
    InvalidClip(f64),
    #[error("image has a single intensity; no threshold separates it")]
    UniformImage,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("smoothing changed foreground area from {before} to {after} (limit ±15%)")]
    AreaDistortion { before: usize, after: usize },
}
