use serde::{Deserialize, Serialize};

use crate::flowviz::{SplitRule, StagnationReport};
use crate::image_ops::{self, detect_polarity, Polarity};
use crate::mesh3d::{loft_tube, validate_mesh, write_stl, LoftOptions, StlFormat, ValidationReport};
use crate::raster::{BinaryMask, ContentHash, GrayImage, Raster};

use super::engine::MeshFault;
use super::ops::{analyze_flow, overlay_base};
use super::session::{ArtifactInfo, FinalizationFailure, FinalizationStage, Session};
use super::steps::{ArtifactKind, STEP_COUNT};
use super::store::SessionStore;

/// Final artifact names, in the order they are produced.
pub const OUTPUT_NAMES: [&str; 4] = ["projection.png", "flow.png", "report.json", "model.stl"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterlineSummary {
    pub nodes: usize,
    pub edges: usize,
    pub endpoints: usize,
    pub junctions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub split_rule: SplitRule,
    /// Pixel positions of the inlet and outlet nodes.
    pub inlets: Vec<[f64; 2]>,
    pub outlets: Vec<[f64; 2]>,
    pub velocity_min: f64,
    pub velocity_max: f64,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub session_id: String,
    pub pipeline_version: String,
    pub width: u32,
    pub height: u32,
    pub pixel_pitch: f64,
    pub n_sides: usize,
    pub vessel_area_px: usize,
    pub centerline: CenterlineSummary,
    pub flow: FlowSummary,
    pub stagnation: StagnationReport,
    pub mesh: ValidationReport,
    pub projection_hash: ContentHash,
    pub flow_hash: ContentHash,
    pub mesh_hash: ContentHash,
}

fn fail(stage: FinalizationStage, message: impl ToString) -> FinalizationFailure {
    FinalizationFailure {
        stage,
        message: message.to_string(),
    }
}

/// Vessel mask of the final projection. A two-level image is read as is;
/// anything else is segmented (polarity, Otsu, cleanup).
pub fn projection_mask(img: &GrayImage) -> Result<BinaryMask, FinalizationFailure> {
    if img.pixels().iter().all(|&p| p == 0 || p == 255) {
        return Ok(BinaryMask::from_gray(img));
    }
    let bright = match detect_polarity(img) {
        Polarity::VesselsDark => image_ops::invert(img),
        Polarity::VesselsBright => img.clone(),
    };
    let (_, mask) = image_ops::otsu_threshold(&bright).map_err(|e| fail(FinalizationStage::Flow, e))?;
    Ok(image_ops::keep_largest_component(&image_ops::fill_holes(&mask)))
}

/// Builds projection.png, flow.png, model.stl and report.json from the
/// accepted last step and records them in `session.outputs`.
pub(crate) fn finalize(
    store: &SessionStore,
    session: &mut Session,
    fault: Option<MeshFault>,
) -> Result<(), FinalizationFailure> {
    let storage = |e: super::PipelineError| fail(FinalizationStage::Storage, e);
    let last = session
        .accepted(STEP_COUNT)
        .ok_or_else(|| fail(FinalizationStage::Storage, "last step is not accepted"))?
        .output_hash
        .clone();
    let kind = session.artifacts.get(&last).map_or(ArtifactKind::Projection, |a| a.kind);
    let bytes = store.read_artifact(&session.id, &last, kind).map_err(storage)?;
    let projection = Raster::decode(&bytes)
        .map_err(|e| fail(FinalizationStage::Storage, e))?
        .to_gray();
    let (w, h) = projection.dimensions();

    let mask = projection_mask(&projection)?;
    let analysis = analyze_flow(&mask, &session.config.flow).map_err(|e| fail(FinalizationStage::Flow, e))?;
    let overlay = analysis
        .render(&overlay_base(&mask))
        .map_err(|e| fail(FinalizationStage::Flow, e))?;

    let opts = LoftOptions {
        n_sides: session.config.n_sides,
        pixel_pitch: session.config.pixel_pitch,
        ..LoftOptions::default()
    };
    let mut mesh = loft_tube(&analysis.graph, &opts).map_err(|e| fail(FinalizationStage::Mesh, e))?;
    if let Some(MeshFault::DropTriangle) = fault {
        mesh.triangles.pop();
    }
    let report = validate_mesh(&mesh);
    if !report.is_valid() {
        return Err(fail(
            FinalizationStage::MeshValidation,
            format!(
                "mesh failed validation: watertight={} oriented={} boundary_edges={} volume={:.3}",
                report.watertight, report.consistently_oriented, report.boundary_edge_count, report.signed_volume
            ),
        ));
    }
    let stl = write_stl(&mesh, StlFormat::Binary).map_err(|e| fail(FinalizationStage::Mesh, e))?;

    let sid = session.id.clone();
    let pipeline_version = session.pipeline_version.clone();
    let config = session.config.clone();
    let artifacts = &mut session.artifacts;
    let mut put = |bytes: &[u8], kind: ArtifactKind, dims: Option<(u32, u32)>| -> Result<ContentHash, FinalizationFailure> {
        let hash = store.put_artifact(&sid, bytes, kind).map_err(storage)?;
        artifacts.entry(hash.clone()).or_insert(ArtifactInfo {
            hash: hash.clone(),
            kind,
            width: dims.map(|d| d.0),
            height: dims.map(|d| d.1),
        });
        Ok(hash)
    };
    let projection_png = Raster::Gray(mask.to_gray())
        .encode_png()
        .map_err(|e| fail(FinalizationStage::Storage, e))?;
    let projection_hash = put(&projection_png, ArtifactKind::Projection, Some((w, h)))?;
    let flow_png = Raster::Rgb(overlay)
        .encode_png()
        .map_err(|e| fail(FinalizationStage::Storage, e))?;
    let flow_hash = put(&flow_png, ArtifactKind::FlowOverlay, Some((w, h)))?;
    let mesh_hash = put(&stl, ArtifactKind::Mesh, None)?;

    let g = &analysis.graph;
    let pos = |i: &usize| [g.nodes[*i].x, g.nodes[*i].y];
    let (vmin, vmax) = analysis.field.velocity_range().unwrap_or((0.0, 0.0));
    let final_report = FinalReport {
        session_id: sid.clone(),
        pipeline_version,
        width: w,
        height: h,
        pixel_pitch: config.pixel_pitch,
        n_sides: config.n_sides,
        vessel_area_px: mask.area(),
        centerline: CenterlineSummary {
            nodes: g.nodes.len(),
            edges: g.edges.len(),
            endpoints: g.endpoints().len(),
            junctions: g.junctions().len(),
        },
        flow: FlowSummary {
            split_rule: analysis.field.rule,
            inlets: analysis.field.inlets.iter().map(pos).collect(),
            outlets: analysis.field.outlets.iter().map(pos).collect(),
            velocity_min: vmin,
            velocity_max: vmax,
        },
        stagnation: analysis.stagnation.clone(),
        mesh: report,
        projection_hash: projection_hash.clone(),
        flow_hash: flow_hash.clone(),
        mesh_hash: mesh_hash.clone(),
    };
    let json = serde_json::to_vec_pretty(&final_report).map_err(|e| fail(FinalizationStage::Storage, e))?;
    let report_hash = put(&json, ArtifactKind::Report, None)?;

    for (name, hash) in OUTPUT_NAMES
        .iter()
        .zip([projection_hash, flow_hash, report_hash, mesh_hash])
    {
        session.outputs.insert(name.to_string(), hash);
    }
    Ok(())
}
