use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::ops::OpName;

pub const PIPELINE_VERSION: &str = "angioforge-16/1";
pub const STEP_COUNT: u8 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    VascularAnalysis,
    ProjectionRefinement,
    VascularOptimization,
    QualityOptimization,
    FlowVisualization,
}

/// What a step's output image represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    SourceAngiogram,
    Projection,
    Mask,
    FlowOverlay,
    Report,
    Mesh,
}

impl ArtifactKind {
    pub fn media_type(self) -> &'static str {
        match self {
            ArtifactKind::Report => "application/json",
            ArtifactKind::Mesh => "model/stl",
            _ => "image/png",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ArtifactKind::Report => "json",
            ArtifactKind::Mesh => "stl",
            _ => "png",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSpec {
    pub index: u8,
    pub name: &'static str,
    pub stage: Stage,
    pub default_prompt: &'static str,
    pub local_op_chain: Vec<OpName>,
    pub output_kind: ArtifactKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineDefinition {
    pub version: &'static str,
    pub steps: Vec<StepSpec>,
}

impl PipelineDefinition {
    /// Step by 1-based index.
    pub fn step(&self, index: u8) -> Option<&StepSpec> {
        index
            .checked_sub(1)
            .and_then(|i| self.steps.get(i as usize))
    }
}

/// The fixed 16-step table.
pub fn pipeline_definition() -> &'static PipelineDefinition {
    static DEF: OnceLock<PipelineDefinition> = OnceLock::new();
    DEF.get_or_init(|| {
        use ArtifactKind::*;
        use OpName::*;
        use Stage::*;
        let table: [(&str, Stage, &str, Vec<OpName>, ArtifactKind); 16] = [
            (
                "grayscale normalization",
                VascularAnalysis,
                "Convert the angiogram to grayscale and stretch its intensities to the full range without altering any anatomy.",
                vec![Normalize],
                Projection,
            ),
            (
                "denoise",
                VascularAnalysis,
                "Remove speckle and quantum noise while keeping every vessel edge sharp.",
                vec![Median3],
                Projection,
            ),
            (
                "adaptive contrast enhancement",
                ProjectionRefinement,
                "Enhance local contrast so that faint contrast-filled vessels stand out from the background.",
                vec![EnhanceContrast],
                Projection,
            ),
            (
                "polarity detection and inversion",
                ProjectionRefinement,
                "Render the vessels bright on a dark background.",
                vec![PolarityInvert],
                Projection,
            ),
            (
                "global segmentation",
                ProjectionRefinement,
                "Segment the contrast-filled vessels into a clean black and white silhouette.",
                vec![OtsuThreshold],
                Mask,
            ),
            (
                "small-artifact removal",
                VascularOptimization,
                "Remove isolated specks, catheter fragments and other small artifacts that are not part of the connection.",
                vec![RemoveSmallComponents],
                Mask,
            ),
            (
                "hole filling",
                VascularOptimization,
                "Fill any gaps inside the vessel lumens.",
                vec![FillHoles],
                Mask,
            ),
            (
                "boundary smoothing",
                VascularOptimization,
                "Smooth the vessel walls without changing their calibers.",
                vec![SmoothBoundary],
                Mask,
            ),
            (
                "vessel-continuity closing",
                VascularOptimization,
                "Bridge small breaks so every vessel segment is continuous.",
                vec![Close],
                Mask,
            ),
            (
                "geometric-proportion audit render",
                QualityOptimization,
                "Keep the anatomy in correct proportion and drop any disproportionate hallucinated structures.",
                vec![KeepDominantComponents],
                Mask,
            ),
            (
                "background suppression",
                QualityOptimization,
                "Suppress everything in the background that is not the connected vessel tree.",
                vec![KeepLargestComponent],
                Mask,
            ),
            (
                "edge sharpening",
                QualityOptimization,
                "Sharpen the vessel silhouette edges.",
                vec![MajorityFilter],
                Mask,
            ),
            (
                "segmentation refinement",
                QualityOptimization,
                "Refine the segmentation, removing thin spurs and filling residual gaps.",
                vec![Open, FillHoles],
                Mask,
            ),
            (
                "final silhouette extraction",
                QualityOptimization,
                "Extract the final single-piece vessel silhouette.",
                vec![FillHoles, KeepLargestComponent],
                Mask,
            ),
            (
                "flow visualization overlay",
                FlowVisualization,
                "Overlay velocity-coded streamlines along the vessel centerlines, red for fast and blue for slow flow, and ring low-velocity zones in yellow.",
                vec![OpName::FlowOverlay],
                ArtifactKind::FlowOverlay,
            ),
            (
                "final optimized projection export",
                FlowVisualization,
                "Export the optimized vessel projection as a clean binary silhouette.",
                vec![MajorityFilter, KeepLargestComponent],
                Projection,
            ),
        ];
        PipelineDefinition {
            version: PIPELINE_VERSION,
            steps: table
                .into_iter()
                .enumerate()
                .map(|(i, (name, stage, prompt, chain, kind))| StepSpec {
                    index: i as u8 + 1,
                    name,
                    stage,
                    default_prompt: prompt,
                    local_op_chain: chain,
                    output_kind: kind,
                })
                .collect(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn table_shape() {
        let def = pipeline_definition();
        assert_eq!(def.steps.len(), STEP_COUNT as usize);
        for (i, s) in def.steps.iter().enumerate() {
            assert_eq!(s.index as usize, i + 1);
            assert!(!s.default_prompt.is_empty());
            assert!(!s.local_op_chain.is_empty());
        }
        let stages: HashSet<Stage> = def.steps.iter().map(|s| s.stage).collect();
        assert_eq!(stages.len(), 5);
        assert!(def.step(0).is_none() && def.step(17).is_none());
        assert_eq!(def.step(16).unwrap().name, "final optimized projection export");
    }
}
