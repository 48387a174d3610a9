use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::raster::Raster;

use super::{check_request, BackendConfig, BackendError, BackendKind, BackendWarning, EditOutput, EditRequest, Health, ImageEditBackend};

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    image: String,
}

#[derive(Deserialize)]
struct WireResponse {
    image: String,
}

/// HTTP client for the remote edit endpoint.
///
/// Wire format: `POST endpoint` with JSON `{"prompt", "image"}` (base64 PNG)
/// and a bearer token read from the configured environment variable at call
/// time; the reply is `{"image"}`. 408, 429, 5xx and transport errors are
/// retried after `backoff_base * 2^(k-1)` ms for retry `k`; other statuses
/// fail at once. A reply of the wrong size is resampled to the input size.
pub struct RemoteBackend {
    config: BackendConfig,
    in_flight: Mutex<usize>,
    slot_free: Condvar,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint_url", &self.config.endpoint_url)
            .field("credential_source", &self.config.credential_source)
            .finish()
    }
}

enum Failure {
    Retryable { status: Option<u16>, timeout: bool, message: String },
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let config = BackendConfig {
            kind: BackendKind::Remote,
            ..config
        };
        config.validate()?;
        Ok(RemoteBackend {
            config,
            in_flight: Mutex::new(0),
            slot_free: Condvar::new(),
        })
    }

    fn endpoint(&self) -> &str {
        self.config.endpoint_url.as_deref().unwrap_or_default()
    }

    fn credential(&self) -> Result<String, BackendError> {
        let var = self.config.credential_source.as_deref().unwrap_or_default();
        std::env::var(var)
            .map_err(|_| BackendError::InvalidConfig(format!("environment variable {var} is not set")))
    }

    fn client(&self) -> Result<reqwest::blocking::Client, BackendError> {
        reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(self.config.timeout_secs))
            .build()
            .map_err(|e| BackendError::InvalidConfig(format!("http client: {e}")))
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut n = self.in_flight.lock().expect("slot lock");
        while *n >= self.config.max_concurrent {
            n = self.slot_free.wait(n).expect("slot lock");
        }
        *n += 1;
        SlotGuard(self)
    }

    fn attempt(
        &self,
        client: &reqwest::blocking::Client,
        key: &str,
        body: &[u8],
        input: &Raster,
    ) -> Result<(Raster, Vec<BackendWarning>), Failure> {
        let resp = client
            .post(self.endpoint())
            .bearer_auth(key)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec())
            .send()
            .map_err(|e| Failure::Retryable {
                status: None,
                timeout: e.is_timeout(),
                message: e.without_url().to_string(),
            })?;
        let status = resp.status().as_u16();
        if status == 408 || status == 429 || resp.status().is_server_error() {
            return Err(Failure::Retryable {
                status: Some(status),
                timeout: false,
                message: format!("HTTP {status}"),
            });
        }
        if !resp.status().is_success() {
            return Err(Failure::Fatal(BackendError::BackendUnavailable {
                attempts: 0,
                last_status: Some(status),
                message: format!("HTTP {status}"),
            }));
        }
        let bytes = resp.bytes().map_err(|e| Failure::Retryable {
            status: Some(status),
            timeout: e.is_timeout(),
            message: e.without_url().to_string(),
        })?;
        let malformed = |m: String| Failure::Fatal(BackendError::MalformedResponse(m));
        let wire: WireResponse =
            serde_json::from_slice(&bytes).map_err(|e| malformed(format!("response is not the expected JSON: {e}")))?;
        let png = STANDARD
            .decode(wire.image.trim())
            .map_err(|e| malformed(format!("image field is not base64: {e}")))?;
        let image = Raster::decode(&png).map_err(|e| malformed(e.to_string()))?;
        let mut warnings = Vec::new();
        if image.dimensions() != input.dimensions() {
            let (width, height) = image.dimensions();
            warnings.push(BackendWarning::ResampledOutput { width, height });
            let (w, h) = input.dimensions();
            return Ok((image.resample(w, h), warnings));
        }
        Ok((image, warnings))
    }
}

struct SlotGuard<'a>(&'a RemoteBackend);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("slot lock");
        *n -= 1;
        self.0.slot_free.notify_one();
    }
}

impl ImageEditBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn edit_image(&self, request: &EditRequest) -> Result<EditOutput, BackendError> {
        check_request(request)?;
        let key = self.credential()?;
        let png = request
            .input
            .encode_png()
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let body = serde_json::to_vec(&WireRequest {
            prompt: &request.prompt,
            image: STANDARD.encode(png),
        })
        .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let client = self.client()?;
        let _slot = self.acquire();

        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&client, &key, &body, &request.input) {
                Ok((image, warnings)) => {
                    return Ok(EditOutput {
                        image,
                        warnings,
                        attempts,
                    })
                }
                Err(Failure::Fatal(BackendError::BackendUnavailable { last_status, message, .. })) => {
                    return Err(BackendError::BackendUnavailable {
                        attempts,
                        last_status,
                        message,
                    })
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable { status, timeout, message }) => {
                    if attempts > self.config.max_retries {
                        return Err(if timeout {
                            BackendError::Timeout { attempts }
                        } else {
                            BackendError::BackendUnavailable {
                                attempts,
                                last_status: status,
                                message,
                            }
                        });
                    }
                    let wait = self.config.backoff(attempts);
                    log::info!(
                        "step {} attempt {attempts} failed ({message}); retrying in {} ms",
                        request.step.index,
                        wait.as_millis()
                    );
                    std::thread::sleep(wait);
                }
            }
        }
    }

    /// One GET round trip: any HTTP answer within half the timeout is
    /// `Ready`, a slower one `Degraded`, no answer `Unreachable`.
    fn health_check(&self) -> Health {
        let Ok(client) = self.client() else {
            return Health::Unreachable;
        };
        let started = Instant::now();
        match client.get(self.endpoint()).send() {
            Ok(_) if started.elapsed() <= Duration::from_secs(self.config.timeout_secs) / 2 => Health::Ready,
            Ok(_) => Health::Degraded,
            Err(_) => Health::Unreachable,
        }
    }
}
