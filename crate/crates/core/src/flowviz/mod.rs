//! Virtual flow visualization over a segmented vessel mask.
//!
//! The chain is: [`distance_transform`] for local radii, [`skeletonize`] for
//! the medial axis, [`build_centerline_graph`] to turn the skeleton into
//! nodes and edges, [`assign_flow`] for a mass-conserving flow split with
//! `v = Q / (pi r^2)`, [`detect_stagnation`] for slow segments and
//! [`render_streamlines`] for the velocity-coded overlay.
//!
//! Projected vessel width is read as the diameter of a circular tube, so
//! velocity goes as `1 / r^2`. All quantities are dimensionless: total
//! inlet flow is normalized to 1.

mod distance;
mod flow;
mod graph;
mod render;
mod skeleton;
mod stagnation;

pub use distance::{distance_transform, DistanceMap};
pub use flow::{assign_flow, default_terminals, terminals_near, EdgeFlow, FlowField, FlowSample, SplitRule};
pub use graph::{
    build_centerline_graph, CenterlineEdge, CenterlineGraph, CenterlineNode, CenterlineSample,
    GraphOptions, NodeKind,
};
pub use render::{render_streamlines, velocity_color, RenderOptions};
pub use skeleton::skeletonize;
pub use stagnation::{detect_stagnation, StagnationOptions, StagnationReport, StagnationZone, ZoneSegment};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowVizError {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("skeleton yields fewer than two graph nodes")]
    DegenerateSkeleton,
    #[error("no inlet node given")]
    NoInlet,
    #[error("no outlet node given")]
    NoOutlet,
    #[error("node {0} is not a valid terminal (must be a distinct endpoint node)")]
    InvalidTerminal(usize),
    #[error("outlet node {0} cannot be reached from any inlet")]
    UnreachableOutlet(usize),
    #[error("inlet node {0} has no path to any outlet")]
    StrandedInlet(usize),
    #[error("flow field has no samples")]
    EmptyField,
    #[error("base image is {base:?} but the flow field was built on {field:?}")]
    DimensionMismatch { base: (u32, u32), field: (u32, u32) },
}
