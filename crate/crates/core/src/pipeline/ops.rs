//! Named image operations that make up the local step chains.

use serde::{Deserialize, Serialize};

use crate::flowviz::{
    assign_flow, build_centerline_graph, default_terminals, detect_stagnation, distance_transform,
    render_streamlines, skeletonize, terminals_near, CenterlineGraph, FlowField, FlowVizError, GraphOptions,
    RenderOptions, SplitRule, StagnationOptions, StagnationReport,
};
use crate::image_ops::{self, detect_polarity, ImageOpsError, Polarity};
use crate::raster::{BinaryMask, GrayImage, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpName {
    Normalize,
    Median3,
    EnhanceContrast,
    PolarityInvert,
    OtsuThreshold,
    RemoveSmallComponents,
    FillHoles,
    SmoothBoundary,
    Close,
    Open,
    KeepDominantComponents,
    KeepLargestComponent,
    MajorityFilter,
    FlowOverlay,
}

/// Terminal selection and split rule for flow analysis. Empty point lists
/// fall back to [`default_terminals`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowSettings {
    pub inlets: Vec<[f64; 2]>,
    pub outlets: Vec<[f64; 2]>,
    pub split_rule: SplitRule,
}

#[derive(Debug, thiserror::Error)]
pub enum OpError {
    #[error("{op:?}: {source}")]
    Image {
        op: OpName,
        #[source]
        source: ImageOpsError,
    },
}

/// Foreground of a working image: gray values of at least 128.
pub fn working_mask(img: &Raster) -> BinaryMask {
    BinaryMask::from_gray(&img.to_gray())
}

/// Runs one operation. Intensity operations read the image as grayscale;
/// mask operations read foreground as gray >= 128 and write 0/255.
pub fn apply_op(op: OpName, input: &Raster, flow: &FlowSettings) -> Result<Raster, OpError> {
    let gray = || input.to_gray();
    let mask = || working_mask(input);
    let (w, h) = input.dimensions();
    let wrap = |source| OpError::Image { op, source };
    let out: Raster = match op {
        OpName::Normalize => image_ops::normalize(&gray()).into(),
        OpName::Median3 => image_ops::median3(&gray()).into(),
        OpName::EnhanceContrast => {
            let tile = (w.min(h) / 8).max(8);
            image_ops::enhance_contrast(&gray(), tile, 0.01).map_err(wrap)?.into()
        }
        OpName::PolarityInvert => {
            let g = gray();
            match detect_polarity(&g) {
                Polarity::VesselsDark => image_ops::invert(&g).into(),
                Polarity::VesselsBright => g.into(),
            }
        }
        OpName::OtsuThreshold => image_ops::otsu_threshold(&gray()).map_err(wrap)?.1.to_gray().into(),
        OpName::RemoveSmallComponents => {
            let min_area = (w as usize * h as usize / 1000).max(1);
            image_ops::remove_small_components(&mask(), min_area)
                .map_err(wrap)?
                .to_gray()
                .into()
        }
        OpName::FillHoles => image_ops::fill_holes(&mask()).to_gray().into(),
        OpName::SmoothBoundary => image_ops::smooth_boundary(&mask(), 2).map_err(wrap)?.to_gray().into(),
        OpName::Close => image_ops::close(&mask(), 2).to_gray().into(),
        OpName::Open => image_ops::open(&mask(), 1).to_gray().into(),
        OpName::KeepDominantComponents => image_ops::keep_dominant_components(&mask(), 0.1).to_gray().into(),
        OpName::KeepLargestComponent => image_ops::keep_largest_component(&mask()).to_gray().into(),
        OpName::MajorityFilter => image_ops::majority_filter(&mask()).to_gray().into(),
        OpName::FlowOverlay => {
            let m = mask();
            let base = overlay_base(&m);
            match analyze_flow(&m, flow).and_then(|a| a.render(&base)) {
                Ok(rgb) => rgb.into(),
                Err(e) => {
                    log::warn!("flow overlay skipped: {e}");
                    base.to_rgb().into()
                }
            }
        }
    };
    Ok(out)
}

pub fn apply_chain(chain: &[OpName], input: &Raster, flow: &FlowSettings) -> Result<Raster, OpError> {
    let mut cur = input.clone();
    for &op in chain {
        cur = apply_op(op, &cur, flow)?;
    }
    Ok(cur)
}

/// Dimmed silhouette so the colored streamlines stand out.
pub fn overlay_base(mask: &BinaryMask) -> GrayImage {
    let (w, h) = mask.dimensions();
    GrayImage::from_fn(w, h, |x, y| if mask.get(x, y) { 80 } else { 0 })
}

#[derive(Debug, Clone)]
pub struct FlowAnalysis {
    pub graph: CenterlineGraph,
    pub field: FlowField,
    pub stagnation: StagnationReport,
}

impl FlowAnalysis {
    pub fn render(&self, base: &GrayImage) -> Result<crate::raster::RgbImage, FlowVizError> {
        render_streamlines(base, &self.field, &self.stagnation, &RenderOptions::default())
    }
}

/// Distance transform, skeleton, centerline graph, flow and stagnation
/// with default options.
pub fn analyze_flow(mask: &BinaryMask, settings: &FlowSettings) -> Result<FlowAnalysis, FlowVizError> {
    let dist = distance_transform(mask)?;
    let skel = skeletonize(mask)?;
    let graph = build_centerline_graph(&skel, &dist, &GraphOptions::default())?;
    let (inlets, outlets) = if settings.inlets.is_empty() && settings.outlets.is_empty() {
        default_terminals(&graph)?
    } else {
        let inlets = terminals_near(&graph, &settings.inlets);
        let outlets = if settings.outlets.is_empty() {
            graph.endpoints().into_iter().filter(|e| !inlets.contains(e)).collect()
        } else {
            terminals_near(&graph, &settings.outlets)
        };
        (inlets, outlets)
    };
    let field = assign_flow(&graph, &inlets, &outlets, settings.split_rule)?;
    let stagnation = detect_stagnation(&field, &StagnationOptions::default())?;
    Ok(FlowAnalysis {
        graph,
        field,
        stagnation,
    })
}
