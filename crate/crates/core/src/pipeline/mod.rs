//! Step table, sessions, audit history, storage and replay.

mod engine;
mod finalize;
pub mod ops;
mod session;
mod steps;
mod store;

pub use engine::{replay, MeshFault, Pipeline};
pub use finalize::{FinalReport, OUTPUT_NAMES};
pub use session::{
    ArtifactInfo, Attempt, Decision, FinalizationFailure, FinalizationStage, RecordState, Session, SessionConfig,
    SessionStatus, StepRecord,
};
pub use steps::{pipeline_definition, ArtifactKind, PipelineDefinition, Stage, StepSpec, PIPELINE_VERSION, STEP_COUNT};
pub use store::{parse_manifest, tmp_path, write_atomic, SessionStore, MANIFEST_FILE};

use crate::backend::BackendError;
use crate::raster::ContentHash;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("image could not be decoded: {0}")]
    UndecodableImage(String),
    #[error("image {width}x{height} is smaller than 16 pixels on a side")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("image {width}x{height} is larger than 8192 pixels on a side")]
    ImageTooLarge { width: u32, height: u32 },
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("all 16 steps are accepted")]
    SessionComplete,
    #[error("session was aborted")]
    SessionAborted,
    #[error("backend failure: {0}")]
    BackendFailure(#[from] BackendError),
    #[error("step {0} has no prior attempt to regenerate")]
    NoPriorAttempt(u8),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("step {step} is not the current step (cursor {cursor})")]
    StepNotCurrent { step: u8, cursor: u8 },
    #[error("no record for step {step} iteration {iteration}")]
    RecordNotFound { step: u8, iteration: u32 },
    #[error("step {step} iteration {iteration} is already {state:?}")]
    AlreadyDecided {
        step: u8,
        iteration: u32,
        state: RecordState,
    },
    #[error("unknown session {0}")]
    SessionNotFound(String),
    #[error("manifest is corrupt: {0}")]
    ManifestCorrupt(String),
    #[error("storage is full")]
    StorageFull,
    #[error("storage error: {0}")]
    Storage(String),
    #[error("replay needs a deterministic backend, session used {0}")]
    NonDeterministicBackend(String),
    #[error("artifact {0} is missing")]
    MissingArtifact(ContentHash),
}
