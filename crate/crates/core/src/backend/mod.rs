//! Image-edit backends.
//!
//! Every pipeline step is one [`ImageEditBackend::edit_image`] call. The
//! local backend runs the step's op chain, the mock returns a fixture or its
//! input, and the remote backend posts the prompt and image to an HTTP
//! endpoint.

mod remote;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::pipeline::ops::{apply_chain, FlowSettings, OpError};
use crate::pipeline::StepSpec;
use crate::raster::Raster;

pub use remote::RemoteBackend;

pub const DEFAULT_CREDENTIAL_ENV: &str = "ANGIOFORGE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Local,
    Mock,
}

impl BackendKind {
    pub fn id(self) -> &'static str {
        match self {
            BackendKind::Remote => "remote",
            BackendKind::Local => "local",
            BackendKind::Mock => "mock",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "remote" => Some(BackendKind::Remote),
            "local" => Some(BackendKind::Local),
            "mock" => Some(BackendKind::Mock),
            _ => None,
        }
    }

    pub fn is_deterministic(self) -> bool {
        !matches!(self, BackendKind::Remote)
    }
}

/// Backend settings. Holds the *name* of the environment variable with the
/// API key, never the key itself, so configs can be written to manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub credential_source: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_concurrent: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Local,
            endpoint_url: None,
            credential_source: None,
            timeout_secs: 60,
            max_retries: 3,
            backoff_base_ms: 500,
            max_concurrent: 4,
        }
    }
}

impl BackendConfig {
    pub fn local() -> Self {
        BackendConfig::default()
    }

    pub fn mock() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            ..BackendConfig::default()
        }
    }

    pub fn remote(endpoint_url: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Remote,
            endpoint_url: Some(endpoint_url.into()),
            credential_source: Some(DEFAULT_CREDENTIAL_ENV.into()),
            ..BackendConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::InvalidConfig(m));
        if !(1..=300).contains(&self.timeout_secs) {
            return bad(format!("timeout {} s outside [1, 300]", self.timeout_secs));
        }
        if self.max_retries > 10 {
            return bad(format!("max_retries {} outside [0, 10]", self.max_retries));
        }
        if self.max_concurrent == 0 {
            return bad("max_concurrent must be at least 1".into());
        }
        if self.kind == BackendKind::Remote {
            if self.endpoint_url.as_deref().unwrap_or("").is_empty() {
                return bad("remote backend needs endpoint_url".into());
            }
            if self.credential_source.as_deref().unwrap_or("").is_empty() {
                return bad("remote backend needs credential_source".into());
            }
        }
        Ok(())
    }

    /// Wait before retry `k` (1-based): `backoff_base * 2^(k-1)`.
    pub fn backoff(&self, k: u32) -> Duration {
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1u64 << (k - 1).min(30)))
    }
}

#[derive(Debug, Clone)]
pub struct EditRequest {
    pub step: StepSpec,
    pub prompt: String,
    pub input: Raster,
    pub session_id: String,
    pub attempt: u32,
    pub flow: FlowSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendWarning {
    /// The backend returned a different size; output was resampled to the
    /// input dimensions.
    ResampledOutput { width: u32, height: u32 },
}

#[derive(Debug, Clone)]
pub struct EditOutput {
    pub image: Raster,
    pub warnings: Vec<BackendWarning>,
    /// Requests sent, including retries.
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Health {
    Ready,
    Degraded,
    Unreachable,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable {
        attempts: u32,
        last_status: Option<u16>,
        message: String,
    },
    #[error("backend timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("invalid edit request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("local step {step} failed: {source}")]
    LocalOp {
        step: u8,
        #[source]
        source: OpError,
    },
}

impl BackendError {
    /// Requests made before giving up, when known.
    pub fn attempts(&self) -> Option<u32> {
        match self {
            BackendError::BackendUnavailable { attempts, .. } | BackendError::Timeout { attempts } => Some(*attempts),
            _ => None,
        }
    }
}

pub trait ImageEditBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn edit_image(&self, request: &EditRequest) -> Result<EditOutput, BackendError>;

    fn health_check(&self) -> Health;

    fn id(&self) -> &'static str {
        self.kind().id()
    }
}

fn check_request(request: &EditRequest) -> Result<(), BackendError> {
    if request.prompt.trim().is_empty() {
        return Err(BackendError::InvalidRequest("prompt is empty".into()));
    }
    if request.attempt == 0 {
        return Err(BackendError::InvalidRequest("attempt must be at least 1".into()));
    }
    Ok(())
}

/// Runs the step's local op chain; ignores the prompt.
#[derive(Debug, Clone, Copy, Default)]
pub struct LocalBackend;

impl ImageEditBackend for LocalBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Local
    }

    fn edit_image(&self, request: &EditRequest) -> Result<EditOutput, BackendError> {
        check_request(request)?;
        let image = apply_chain(&request.step.local_op_chain, &request.input, &request.flow).map_err(|source| {
            BackendError::LocalOp {
                step: request.step.index,
                source,
            }
        })?;
        Ok(EditOutput {
            image,
            warnings: Vec::new(),
            attempts: 1,
        })
    }

    fn health_check(&self) -> Health {
        Health::Ready
    }
}

/// Returns a fixed image (resampled to the input size if needed) or, with
/// no fixture, the input itself.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    fixture: Option<Raster>,
}

impl MockBackend {
    pub fn identity() -> Self {
        MockBackend { fixture: None }
    }

    pub fn with_fixture(fixture: Raster) -> Self {
        MockBackend { fixture: Some(fixture) }
    }
}

impl ImageEditBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn edit_image(&self, request: &EditRequest) -> Result<EditOutput, BackendError> {
        check_request(request)?;
        let mut warnings = Vec::new();
        let image = match &self.fixture {
            None => request.input.clone(),
            Some(f) if f.dimensions() == request.input.dimensions() => f.clone(),
            Some(f) => {
                let (width, height) = f.dimensions();
                warnings.push(BackendWarning::ResampledOutput { width, height });
                let (w, h) = request.input.dimensions();
                f.resample(w, h)
            }
        };
        Ok(EditOutput {
            image,
            warnings,
            attempts: 1,
        })
    }

    fn health_check(&self) -> Health {
        Health::Ready
    }
}

/// Builds the backend described by `config`. The mock built here has no
/// fixture.
pub fn build_backend(config: &BackendConfig) -> Result<Arc<dyn ImageEditBackend>, BackendError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Local => Arc::new(LocalBackend),
        BackendKind::Mock => Arc::new(MockBackend::identity()),
        BackendKind::Remote => Arc::new(RemoteBackend::new(config.clone())?),
    })
}
