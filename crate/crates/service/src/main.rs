use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, ValueEnum};

use angioforge_core::backend::{build_backend, BackendConfig};
use angioforge_core::pipeline::{Pipeline, SessionConfig, SessionStore};
use angioforge_service::{router, AppState};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Backend {
    Local,
    Mock,
    Remote,
}

/// Serves the angioforge session API.
#[derive(Debug, Parser)]
#[command(name = "angioforge-server", version)]
struct Args {
    #[arg(long, env = "ANGIOFORGE_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Session store root.
    #[arg(long, env = "ANGIOFORGE_STORE", default_value = "angioforge-store")]
    store: PathBuf,
    #[arg(long, env = "ANGIOFORGE_BACKEND", value_enum, default_value_t = Backend::Local)]
    backend: Backend,
    /// Image-edit endpoint for the remote backend.
    #[arg(long, env = "ANGIOFORGE_ENDPOINT")]
    endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long, env = "ANGIOFORGE_CREDENTIAL_ENV", default_value = "ANGIOFORGE_API_KEY")]
    credential_env: String,
    #[arg(long, env = "ANGIOFORGE_TIMEOUT_SECS", default_value_t = 60)]
    timeout_secs: u64,
    #[arg(long, env = "ANGIOFORGE_MAX_RETRIES", default_value_t = 3)]
    max_retries: u32,
    /// Default millimeters per pixel for new sessions.
    #[arg(long, env = "ANGIOFORGE_PIXEL_PITCH", default_value_t = 0.25)]
    pixel_pitch: f64,
    /// Default tube polygon sides for new sessions.
    #[arg(long, env = "ANGIOFORGE_N_SIDES", default_value_t = 16)]
    n_sides: usize,
    /// Allowed CORS origin; repeatable. Any origin when omitted.
    #[arg(long = "cors-origin", env = "ANGIOFORGE_CORS_ORIGINS", value_delimiter = ',')]
    cors_origins: Vec<String>,
}

fn backend_config(args: &Args) -> BackendConfig {
    let base = match args.backend {
        Backend::Local => BackendConfig::local(),
        Backend::Mock => BackendConfig::mock(),
        Backend::Remote => BackendConfig::remote(args.endpoint.clone().unwrap_or_default()),
    };
    BackendConfig {
        credential_source: match args.backend {
            Backend::Remote => Some(args.credential_env.clone()),
            _ => None,
        },
        timeout_secs: args.timeout_secs,
        max_retries: args.max_retries,
        ..base
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let backend_cfg = backend_config(&args);
    let backend = match build_backend(&backend_cfg) {
        Ok(b) => b,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(2);
        }
    };
    let defaults = SessionConfig {
        backend: backend_cfg.clone(),
        pixel_pitch: args.pixel_pitch,
        n_sides: args.n_sides,
        ..SessionConfig::default()
    };
    if let Err(e) = defaults.validate() {
        log::error!("{e}");
        return ExitCode::from(2);
    }
    let store = match SessionStore::open(&args.store) {
        Ok(s) => s,
        Err(e) => {
            log::error!("store {}: {e}", args.store.display());
            return ExitCode::from(2);
        }
    };
    let state = Arc::new(AppState::new(Pipeline::new(store, backend), backend_cfg, defaults));
    let cors = (!args.cors_origins.is_empty()).then(|| args.cors_origins.clone());
    let listener = match tokio::net::TcpListener::bind(args.listen).await {
        Ok(l) => l,
        Err(e) => {
            log::error!("bind {}: {e}", args.listen);
            return ExitCode::from(2);
        }
    };
    log::info!("listening on {} with {:?} backend", args.listen, args.backend);
    let served = axum::serve(listener, router(state, cors)).with_graceful_shutdown(async {
        let _ = tokio::signal::ctrl_c().await;
    });
    if let Err(e) = served.await {
        log::error!("{e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
