use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, BackendWarning};
use crate::raster::ContentHash;

use super::ops::FlowSettings;
use super::steps::{pipeline_definition, ArtifactKind, STEP_COUNT};
use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub backend: BackendConfig,
    /// Millimeters per pixel for the mesh.
    pub pixel_pitch: f64,
    pub n_sides: usize,
    pub flow: FlowSettings,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            backend: BackendConfig::default(),
            pixel_pitch: 0.25,
            n_sides: 16,
            flow: FlowSettings::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.pixel_pitch.is_finite() && self.pixel_pitch > 0.0) {
            return Err(PipelineError::InvalidConfig(format!("pixel_pitch must be positive, got {}", self.pixel_pitch)));
        }
        if !(6..=256).contains(&self.n_sides) {
            return Err(PipelineError::InvalidConfig(format!("n_sides must be in 6..=256, got {}", self.n_sides)));
        }
        let points = self.flow.inlets.iter().chain(&self.flow.outlets);
        if points.flatten().any(|c| !c.is_finite()) {
            return Err(PipelineError::InvalidConfig("terminal coordinates must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactInfo {
    pub hash: ContentHash,
    pub kind: ArtifactKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
}

impl ArtifactInfo {
    pub fn media_type(&self) -> &'static str {
        self.kind.media_type()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordState {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    InProgress,
    Complete,
    Aborted,
}

/// One backend run of one step, as written. Never changed afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub step_index: u8,
    pub iteration: u32,
    pub prompt_used: String,
    pub backend_id: String,
    pub input_hash: ContentHash,
    pub output_hash: ContentHash,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    #[serde(default)]
    pub backend_attempts: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<BackendWarning>,
}

/// Accept or reject of one attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub step_index: u8,
    pub iteration: u32,
    pub state: RecordState,
    pub at: DateTime<Utc>,
}

/// An attempt together with its current review state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: u8,
    pub iteration: u32,
    pub prompt_used: String,
    pub backend_id: String,
    pub input_hash: ContentHash,
    pub output_hash: ContentHash,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub state: RecordState,
    pub backend_attempts: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<BackendWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalizationStage {
    Flow,
    Mesh,
    MeshValidation,
    Storage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizationFailure {
    pub stage: FinalizationStage,
    pub message: String,
}

/// A single angiogram's run through the pipeline.
///
/// `attempts` and `decisions` are both append-only. A record's state is the
/// state of the last decision naming it, or `Pending` if none does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub pipeline_version: String,
    pub source_image: ArtifactInfo,
    pub config: SessionConfig,
    pub attempts: Vec<Attempt>,
    pub decisions: Vec<Decision>,
    pub status: SessionStatus,
    /// Every stored artifact, by hash.
    pub artifacts: BTreeMap<ContentHash, ArtifactInfo>,
    /// Final outputs by file name.
    #[serde(default)]
    pub outputs: BTreeMap<String, ContentHash>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finalization_error: Option<FinalizationFailure>,
}

impl Session {
    pub fn state_of(&self, step: u8, iteration: u32) -> Option<RecordState> {
        self.attempt(step, iteration)?;
        Some(
            self.decisions
                .iter()
                .rev()
                .find(|d| d.step_index == step && d.iteration == iteration)
                .map_or(RecordState::Pending, |d| d.state),
        )
    }

    pub fn attempt(&self, step: u8, iteration: u32) -> Option<&Attempt> {
        self.attempts
            .iter()
            .find(|a| a.step_index == step && a.iteration == iteration)
    }

    pub fn accepted(&self, step: u8) -> Option<&Attempt> {
        self.attempts
            .iter()
            .filter(|a| a.step_index == step)
            .find(|a| self.state_of(a.step_index, a.iteration) == Some(RecordState::Accepted))
    }

    /// 1 + the highest step with an accepted record.
    pub fn cursor(&self) -> u8 {
        1 + (1..=STEP_COUNT)
            .rev()
            .find(|&s| self.accepted(s).is_some())
            .unwrap_or(0)
    }

    pub fn next_iteration(&self, step: u8) -> u32 {
        1 + self
            .attempts
            .iter()
            .filter(|a| a.step_index == step)
            .map(|a| a.iteration)
            .max()
            .unwrap_or(0)
    }

    pub fn accepted_count(&self) -> usize {
        (1..=STEP_COUNT).filter(|&s| self.accepted(s).is_some()).count()
    }

    pub fn records(&self) -> Vec<StepRecord> {
        self.attempts
            .iter()
            .map(|a| StepRecord {
                step_index: a.step_index,
                iteration: a.iteration,
                prompt_used: a.prompt_used.clone(),
                backend_id: a.backend_id.clone(),
                input_hash: a.input_hash.clone(),
                output_hash: a.output_hash.clone(),
                started_at: a.started_at,
                finished_at: a.finished_at,
                state: self.state_of(a.step_index, a.iteration).unwrap_or(RecordState::Pending),
                backend_attempts: a.backend_attempts,
                warnings: a.warnings.clone(),
            })
            .collect()
    }

    pub fn record(&self, step: u8, iteration: u32) -> Option<StepRecord> {
        self.records()
            .into_iter()
            .find(|r| r.step_index == step && r.iteration == iteration)
    }

    /// Input for `step`: the source for step 1, otherwise the accepted
    /// output of the nearest earlier step that is not a flow overlay.
    pub fn step_input(&self, step: u8) -> Option<ContentHash> {
        let def = pipeline_definition();
        for s in (1..step).rev() {
            if def.step(s)?.output_kind == ArtifactKind::FlowOverlay {
                continue;
            }
            return self.accepted(s).map(|a| a.output_hash.clone());
        }
        Some(self.source_image.hash.clone())
    }

    /// Appends a decision. Accepting also rejects the step's other pending
    /// records and completes the session when the last step is accepted.
    pub fn decide(&mut self, step: u8, iteration: u32, state: RecordState, at: DateTime<Utc>) -> Result<(), PipelineError> {
        let current = self
            .state_of(step, iteration)
            .ok_or(PipelineError::RecordNotFound { step, iteration })?;
        if current != RecordState::Pending {
            return Err(PipelineError::AlreadyDecided {
                step,
                iteration,
                state: current,
            });
        }
        self.decisions.push(Decision {
            step_index: step,
            iteration,
            state,
            at,
        });
        if state == RecordState::Accepted {
            let others: Vec<u32> = self
                .attempts
                .iter()
                .filter(|a| a.step_index == step && a.iteration != iteration)
                .filter(|a| self.state_of(step, a.iteration) == Some(RecordState::Pending))
                .map(|a| a.iteration)
                .collect();
            for it in others {
                self.decisions.push(Decision {
                    step_index: step,
                    iteration: it,
                    state: RecordState::Rejected,
                    at,
                });
            }
            if self.accepted_count() == STEP_COUNT as usize {
                self.status = SessionStatus::Complete;
            }
        }
        Ok(())
    }

    /// Hashes the manifest references: source, attempt inputs and outputs,
    /// final outputs.
    pub fn referenced_hashes(&self) -> Vec<ContentHash> {
        let mut v = vec![self.source_image.hash.clone()];
        for a in &self.attempts {
            v.push(a.input_hash.clone());
            v.push(a.output_hash.clone());
        }
        v.extend(self.outputs.values().cloned());
        v.sort();
        v.dedup();
        v
    }
}
