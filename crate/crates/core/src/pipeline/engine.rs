use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::Utc;

use crate::backend::{BackendKind, EditRequest, ImageEditBackend, LocalBackend, MockBackend};
use crate::raster::{ContentHash, Raster, MAX_SIDE, MIN_SIDE};

use super::finalize::finalize;
use super::session::{ArtifactInfo, Attempt, RecordState, Session, SessionConfig, SessionStatus, StepRecord};
use super::steps::{pipeline_definition, ArtifactKind, StepSpec, PIPELINE_VERSION, STEP_COUNT};
use super::store::SessionStore;
use super::PipelineError;

/// Deliberate mesh corruption applied just before validation, for
/// exercising the failure path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFault {
    DropTriangle,
}

/// Session operations over a store and a backend. Callers must not run two
/// operations on the same session at once.
#[derive(Clone)]
pub struct Pipeline {
    store: SessionStore,
    backend: Arc<dyn ImageEditBackend>,
    mesh_fault: Option<MeshFault>,
}

impl Pipeline {
    pub fn new(store: SessionStore, backend: Arc<dyn ImageEditBackend>) -> Self {
        Pipeline {
            store,
            backend,
            mesh_fault: None,
        }
    }

    #[doc(hidden)]
    pub fn with_mesh_fault(mut self, fault: MeshFault) -> Self {
        self.mesh_fault = Some(fault);
        self
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    pub fn backend(&self) -> &Arc<dyn ImageEditBackend> {
        &self.backend
    }

    pub fn load(&self, id: &str) -> Result<Session, PipelineError> {
        self.store.load(id)
    }

    /// Decodes and stores the source image and writes an empty session.
    pub fn create_session(&self, image: &[u8], mut config: SessionConfig) -> Result<Session, PipelineError> {
        config.validate()?;
        let raster = Raster::decode(image).map_err(|e| PipelineError::UndecodableImage(e.to_string()))?;
        let (width, height) = raster.dimensions();
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(PipelineError::ImageTooSmall { width, height });
        }
        if width > MAX_SIDE || height > MAX_SIDE {
            return Err(PipelineError::ImageTooLarge { width, height });
        }
        config.backend.kind = self.backend.kind();
        let id = uuid::Uuid::new_v4().to_string();
        let png = raster.encode_png().map_err(|e| PipelineError::Storage(e.to_string()))?;
        let hash = self.store.put_artifact(&id, &png, ArtifactKind::SourceAngiogram)?;
        let source = ArtifactInfo {
            hash: hash.clone(),
            kind: ArtifactKind::SourceAngiogram,
            width: Some(width),
            height: Some(height),
        };
        let session = Session {
            id,
            created_at: Utc::now(),
            pipeline_version: PIPELINE_VERSION.to_string(),
            source_image: source.clone(),
            config,
            attempts: Vec::new(),
            decisions: Vec::new(),
            status: SessionStatus::InProgress,
            artifacts: BTreeMap::from([(hash, source)]),
            outputs: BTreeMap::new(),
            finalization_error: None,
        };
        self.store.save(&session)?;
        Ok(session)
    }

    fn current_step(&self, session: &Session) -> Result<&'static StepSpec, PipelineError> {
        match session.status {
            SessionStatus::Complete => return Err(PipelineError::SessionComplete),
            SessionStatus::Aborted => return Err(PipelineError::SessionAborted),
            SessionStatus::InProgress => {}
        }
        let cursor = session.cursor();
        pipeline_definition().step(cursor).ok_or(PipelineError::SessionComplete)
    }

    fn run_step(&self, session: &mut Session, spec: &StepSpec, prompt: &str) -> Result<StepRecord, PipelineError> {
        let input_hash = session
            .step_input(spec.index)
            .ok_or_else(|| PipelineError::ManifestCorrupt(format!("no input for step {}", spec.index)))?;
        let input_kind = session.artifacts.get(&input_hash).map_or(ArtifactKind::Projection, |a| a.kind);
        let input = Raster::decode(&self.store.read_artifact(&session.id, &input_hash, input_kind)?)
            .map_err(|e| PipelineError::ManifestCorrupt(format!("artifact {input_hash}: {e}")))?;
        let iteration = session.next_iteration(spec.index);
        let started_at = Utc::now();
        let out = self.backend.edit_image(&EditRequest {
            step: spec.clone(),
            prompt: prompt.to_string(),
            input,
            session_id: session.id.clone(),
            attempt: iteration,
            flow: session.config.flow.clone(),
        })?;
        let png = out.image.encode_png().map_err(|e| PipelineError::Storage(e.to_string()))?;
        let output_hash = self.store.put_artifact(&session.id, &png, spec.output_kind)?;
        let (width, height) = out.image.dimensions();
        session.artifacts.entry(output_hash.clone()).or_insert(ArtifactInfo {
            hash: output_hash.clone(),
            kind: spec.output_kind,
            width: Some(width),
            height: Some(height),
        });
        let finished_at = Utc::now().max(started_at);
        session.attempts.push(Attempt {
            step_index: spec.index,
            iteration,
            prompt_used: prompt.to_string(),
            backend_id: self.backend.id().to_string(),
            input_hash,
            output_hash,
            started_at,
            finished_at,
            backend_attempts: out.attempts,
            warnings: out.warnings,
        });
        self.store.save(session)?;
        Ok(session.record(spec.index, iteration).expect("just appended"))
    }

    /// Runs the cursor step with its default prompt and appends a pending
    /// record.
    pub fn advance_step(&self, session: &mut Session) -> Result<StepRecord, PipelineError> {
        let spec = self.current_step(session)?;
        self.run_step(session, spec, spec.default_prompt)
    }

    /// Re-runs the cursor step with a custom prompt.
    pub fn regenerate_step(&self, session: &mut Session, prompt: &str) -> Result<StepRecord, PipelineError> {
        if prompt.trim().is_empty() {
            return Err(PipelineError::EmptyPrompt);
        }
        let spec = self.current_step(session)?;
        if session.next_iteration(spec.index) == 1 {
            return Err(PipelineError::NoPriorAttempt(spec.index));
        }
        self.run_step(session, spec, prompt)
    }

    /// Accepts a pending record. Accepting the last step completes the
    /// session and builds the final outputs; a failure there is recorded in
    /// `session.finalization_error` rather than returned.
    pub fn accept_step(&self, session: &mut Session, step: u8, iteration: u32) -> Result<(), PipelineError> {
        session.decide(step, iteration, RecordState::Accepted, Utc::now())?;
        self.store.save(session)?;
        if session.status == SessionStatus::Complete && session.outputs.is_empty() {
            if let Err(failure) = finalize(&self.store, session, self.mesh_fault) {
                log::warn!("finalization failed at {:?}: {}", failure.stage, failure.message);
                session.finalization_error = Some(failure);
            }
            self.store.save(session)?;
        }
        Ok(())
    }

    pub fn reject_step(&self, session: &mut Session, step: u8, iteration: u32) -> Result<(), PipelineError> {
        session.decide(step, iteration, RecordState::Rejected, Utc::now())?;
        self.store.save(session)?;
        Ok(())
    }
}

/// Re-executes every accepted step from the source image with the
/// session's (deterministic) backend and returns each step's output hash,
/// in step order.
pub fn replay(store: &SessionStore, session: &Session) -> Result<Vec<(u8, ContentHash)>, PipelineError> {
    let mut kinds = vec![session.config.backend.kind.id().to_string()];
    kinds.extend(session.attempts.iter().map(|a| a.backend_id.clone()));
    let mut kind = None;
    for id in kinds {
        match BackendKind::from_id(&id) {
            Some(k) if k.is_deterministic() => kind = kind.or(Some(k)),
            _ => return Err(PipelineError::NonDeterministicBackend(id)),
        }
    }
    let backend: Box<dyn ImageEditBackend> = match kind {
        Some(BackendKind::Mock) => Box::new(MockBackend::identity()),
        _ => Box::new(LocalBackend),
    };

    let accepted: Vec<&Attempt> = (1..=STEP_COUNT).filter_map(|s| session.accepted(s)).collect();
    for hash in std::iter::once(&session.source_image.hash).chain(accepted.iter().map(|a| &a.output_hash)) {
        let kind = session.artifacts.get(hash).map_or(ArtifactKind::Projection, |a| a.kind);
        if !store.artifact_path(&session.id, hash, kind).is_file() {
            return Err(PipelineError::MissingArtifact(hash.clone()));
        }
    }

    let source = store.read_artifact(&session.id, &session.source_image.hash, ArtifactKind::SourceAngiogram)?;
    let mut current =
        Raster::decode(&source).map_err(|e| PipelineError::ManifestCorrupt(format!("source image: {e}")))?;
    let mut hashes = Vec::with_capacity(accepted.len());
    for a in accepted {
        let spec = pipeline_definition()
            .step(a.step_index)
            .ok_or_else(|| PipelineError::ManifestCorrupt(format!("step {}", a.step_index)))?;
        let out = backend.edit_image(&EditRequest {
            step: spec.clone(),
            prompt: a.prompt_used.clone(),
            input: current.clone(),
            session_id: session.id.clone(),
            attempt: a.iteration,
            flow: session.config.flow.clone(),
        })?;
        let png = out.image.encode_png().map_err(|e| PipelineError::Storage(e.to_string()))?;
        hashes.push((a.step_index, ContentHash::of(&png)));
        if spec.output_kind != ArtifactKind::FlowOverlay {
            current = out.image;
        }
    }
    Ok(hashes)
}
