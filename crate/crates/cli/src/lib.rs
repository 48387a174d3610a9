//! Batch runner, manifest inspection and STL validation.
//!
//! Exit codes: 0 success, 1 other failure (including a mesh that fails
//! `validate`), 2 input error, 3 backend failure, 4 mesh validation failure
//! during `run`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use angioforge_core::backend::{build_backend, BackendConfig, BackendKind};
use angioforge_core::mesh3d::{read_stl, validate_mesh, ValidationReport};
use angioforge_core::pipeline::{
    parse_manifest, ArtifactKind, FinalizationStage, MeshFault, Pipeline, PipelineError, Session, SessionConfig,
    SessionStatus, SessionStore, OUTPUT_NAMES,
};
use angioforge_core::pipeline::ops::FlowSettings;

pub const EXIT_OK: u8 = 0;
pub const EXIT_OTHER: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;
pub const EXIT_MESH: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn new(code: u8, message: impl ToString) -> Self {
        CliError {
            code,
            message: message.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        use PipelineError::*;
        let code = match e {
            UndecodableImage(_) | ImageTooSmall { .. } | ImageTooLarge { .. } | InvalidConfig(_) => EXIT_INPUT,
            BackendFailure(_) => EXIT_BACKEND,
            _ => EXIT_OTHER,
        };
        CliError::new(code, e)
    }
}

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    pub backend: BackendConfig,
    pub auto_accept: bool,
    pub pixel_pitch: f64,
    pub n_sides: usize,
    pub flow: FlowSettings,
    pub mesh_fault: Option<MeshFault>,
}

impl BatchConfig {
    pub fn new(input: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        let d = SessionConfig::default();
        BatchConfig {
            input: input.into(),
            output: output.into(),
            backend: BackendConfig::local(),
            auto_accept: true,
            pixel_pitch: d.pixel_pitch,
            n_sides: d.n_sides,
            flow: FlowSettings::default(),
            mesh_fault: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub session_id: String,
    pub status: SessionStatus,
    pub elapsed: Duration,
    /// Files written to the output directory.
    pub written: Vec<PathBuf>,
}

/// Session store used by `run`, under the output directory.
pub fn store_dir(output: &Path) -> PathBuf {
    output.join("session")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::new(EXIT_OTHER, format!("{}: {e}", path.display())))
}

fn copy_manifest(store: &SessionStore, session: &Session, output: &Path) -> Result<PathBuf, CliError> {
    let dest = output.join("manifest.json");
    let bytes = std::fs::read(store.manifest_path(&session.id))
        .map_err(|e| CliError::new(EXIT_OTHER, format!("manifest: {e}")))?;
    write_file(&dest, &bytes)?;
    Ok(dest)
}

/// Runs the pipeline on one image, accepting every step, and writes the
/// final artifacts and the manifest to the output directory. Without
/// auto-accept (remote backend only) it stops after the first step,
/// leaving it pending in the session store for review.
pub fn run(cfg: &BatchConfig) -> Result<RunSummary, CliError> {
    let started = Instant::now();
    if !cfg.auto_accept && cfg.backend.kind != BackendKind::Remote {
        return Err(CliError::new(
            EXIT_INPUT,
            format!("{} backend requires auto-accept in batch mode", cfg.backend.kind.id()),
        ));
    }
    let image = std::fs::read(&cfg.input)
        .map_err(|e| CliError::new(EXIT_INPUT, format!("{}: {e}", cfg.input.display())))?;
    std::fs::create_dir_all(&cfg.output)
        .map_err(|e| CliError::new(EXIT_OTHER, format!("{}: {e}", cfg.output.display())))?;
    for name in OUTPUT_NAMES.iter().chain(&["manifest.json"]) {
        let stale = cfg.output.join(name);
        if stale.is_file() {
            std::fs::remove_file(&stale).map_err(|e| CliError::new(EXIT_OTHER, format!("{}: {e}", stale.display())))?;
        }
    }

    let backend = build_backend(&cfg.backend).map_err(|e| CliError::new(EXIT_INPUT, e))?;
    let store = SessionStore::open(store_dir(&cfg.output))?;
    let mut pipeline = Pipeline::new(store.clone(), backend);
    if let Some(fault) = cfg.mesh_fault {
        pipeline = pipeline.with_mesh_fault(fault);
    }
    let session_cfg = SessionConfig {
        backend: cfg.backend.clone(),
        pixel_pitch: cfg.pixel_pitch,
        n_sides: cfg.n_sides,
        flow: cfg.flow.clone(),
    };
    let mut session = pipeline.create_session(&image, session_cfg)?;
    log::info!("session {}", session.id);

    let mut written = Vec::new();
    if !cfg.auto_accept {
        let rec = pipeline.advance_step(&mut session)?;
        log::info!("step {} iteration {} is pending review", rec.step_index, rec.iteration);
        written.push(copy_manifest(&store, &session, &cfg.output)?);
        return Ok(RunSummary {
            session_id: session.id,
            status: session.status,
            elapsed: started.elapsed(),
            written,
        });
    }

    while session.status == SessionStatus::InProgress {
        let rec = pipeline.advance_step(&mut session)?;
        pipeline.accept_step(&mut session, rec.step_index, rec.iteration)?;
        log::info!("step {:>2} accepted ({})", rec.step_index, rec.output_hash.short());
    }
    written.push(copy_manifest(&store, &session, &cfg.output)?);
    if let Some(f) = &session.finalization_error {
        let code = match f.stage {
            FinalizationStage::Mesh | FinalizationStage::MeshValidation => EXIT_MESH,
            FinalizationStage::Flow | FinalizationStage::Storage => EXIT_OTHER,
        };
        return Err(CliError::new(code, format!("{:?} stage failed: {}", f.stage, f.message)));
    }
    for name in OUTPUT_NAMES {
        let hash = &session.outputs[name];
        let kind = session.artifacts.get(hash).map_or(ArtifactKind::Projection, |a| a.kind);
        let bytes = store.read_artifact(&session.id, hash, kind)?;
        let path = cfg.output.join(name);
        write_file(&path, &bytes)?;
        written.push(path);
    }
    Ok(RunSummary {
        session_id: session.id,
        status: session.status,
        elapsed: started.elapsed(),
        written,
    })
}

fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_string()
    } else {
        let mut t: String = s.chars().take(n - 3).collect();
        t.push_str("...");
        t
    }
}

/// History table for a manifest file.
pub fn inspect(manifest: &Path) -> Result<String, CliError> {
    let bytes =
        std::fs::read(manifest).map_err(|e| CliError::new(EXIT_INPUT, format!("{}: {e}", manifest.display())))?;
    let session = parse_manifest(&bytes).map_err(|e| CliError::new(EXIT_INPUT, e))?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "session {}  {:?}  cursor {}  accepted {}/16  backend {}",
        session.id,
        session.status,
        session.cursor(),
        session.accepted_count(),
        session.config.backend.kind.id()
    );
    let _ = writeln!(
        out,
        "{:>4}  {:>4}  {:<8}  {:>9}  {:<12}  PROMPT",
        "STEP", "ITER", "STATE", "MS", "OUTPUT"
    );
    for r in session.records() {
        let ms = (r.finished_at - r.started_at).num_milliseconds();
        let _ = writeln!(
            out,
            "{:>4}  {:>4}  {:<8}  {:>9}  {:<12}  {}",
            r.step_index,
            r.iteration,
            format!("{:?}", r.state).to_lowercase(),
            ms,
            r.output_hash.short(),
            truncate(&r.prompt_used, 60)
        );
    }
    if let Some(f) = &session.finalization_error {
        let _ = writeln!(out, "finalization failed at {:?}: {}", f.stage, f.message);
    }
    for (name, hash) in &session.outputs {
        let _ = writeln!(out, "output {name:<15} {hash}");
    }
    Ok(out)
}

/// Reads and checks an STL file. The exit code is 0 iff the mesh is
/// watertight, edge-manifold and consistently oriented.
pub fn validate(path: &Path) -> Result<(ValidationReport, u8), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::new(EXIT_INPUT, format!("{}: {e}", path.display())))?;
    let mesh = read_stl(&bytes).map_err(|e| CliError::new(EXIT_INPUT, e))?;
    let report = validate_mesh(&mesh);
    let ok = report.watertight && report.edge_manifold && report.consistently_oriented;
    Ok((report, if ok { EXIT_OK } else { EXIT_OTHER }))
}

pub fn format_report(r: &ValidationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "triangles               {}", r.triangle_count);
    let _ = writeln!(out, "vertices                {}", r.vertex_count);
    let _ = writeln!(out, "watertight              {}", r.watertight);
    let _ = writeln!(out, "edge_manifold           {}", r.edge_manifold);
    let _ = writeln!(out, "consistently_oriented   {}", r.consistently_oriented);
    let _ = writeln!(out, "boundary_edge_count     {}", r.boundary_edge_count);
    let _ = writeln!(out, "nonmanifold_edge_count  {}", r.nonmanifold_edge_count);
    let _ = writeln!(out, "euler_characteristic    {}", r.euler_characteristic);
    let _ = writeln!(out, "signed_volume           {:.6}", r.signed_volume);
    let _ = writeln!(out, "degenerate_triangles    {}", r.degenerate_triangle_count);
    let _ = writeln!(out, "min_dihedral_quality    {:.4}", r.min_dihedral_quality);
    out
}
