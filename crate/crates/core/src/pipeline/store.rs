use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use crate::raster::ContentHash;

use super::session::Session;
use super::steps::ArtifactKind;
use super::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// On-disk session storage.
///
/// ```text
/// root/<session id>/manifest.json
/// root/<session id>/artifacts/<sha256>.<png|json|stl>
/// ```
///
/// Manifests are replaced by write-temp-then-rename, so a crash leaves
/// either the old or the new manifest, never a torn one.
#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

fn io_err(e: std::io::Error) -> PipelineError {
    if e.kind() == ErrorKind::StorageFull {
        PipelineError::StorageFull
    } else {
        PipelineError::Storage(e.to_string())
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err)?;
        Ok(SessionStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn manifest_path(&self, id: &str) -> PathBuf {
        self.session_dir(id).join(MANIFEST_FILE)
    }

    pub fn artifact_path(&self, id: &str, hash: &ContentHash, kind: ArtifactKind) -> PathBuf {
        self.session_dir(id)
            .join("artifacts")
            .join(format!("{}.{}", hash, kind.extension()))
    }

    /// Session ids with a manifest, sorted.
    pub fn list(&self) -> Result<Vec<String>, PipelineError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err)? {
            let entry = entry.map_err(io_err)?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if valid_id(&name) && entry.path().join(MANIFEST_FILE).is_file() {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Stores bytes under their hash; existing files are left alone.
    pub fn put_artifact(&self, id: &str, bytes: &[u8], kind: ArtifactKind) -> Result<ContentHash, PipelineError> {
        let hash = ContentHash::of(bytes);
        let path = self.artifact_path(id, &hash, kind);
        if !path.is_file() {
            write_atomic(&path, bytes)?;
        }
        Ok(hash)
    }

    pub fn read_artifact(&self, id: &str, hash: &ContentHash, kind: ArtifactKind) -> Result<Vec<u8>, PipelineError> {
        fs::read(self.artifact_path(id, hash, kind)).map_err(|e| match e.kind() {
            ErrorKind::NotFound => PipelineError::MissingArtifact(hash.clone()),
            _ => io_err(e),
        })
    }

    pub fn save(&self, session: &Session) -> Result<PathBuf, PipelineError> {
        let path = self.manifest_path(&session.id);
        let json = serde_json::to_vec_pretty(session).map_err(|e| PipelineError::Storage(e.to_string()))?;
        write_atomic(&path, &json)?;
        Ok(path)
    }

    /// Loads and checks a manifest: it must parse, and every artifact it
    /// references must be on disk.
    pub fn load(&self, id: &str) -> Result<Session, PipelineError> {
        if !valid_id(id) {
            return Err(PipelineError::SessionNotFound(id.to_string()));
        }
        let bytes = match fs::read(self.manifest_path(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Err(PipelineError::SessionNotFound(id.to_string())),
            Err(e) => return Err(io_err(e)),
        };
        let session = parse_manifest(&bytes)?;
        if session.id != id {
            return Err(PipelineError::ManifestCorrupt(format!(
                "manifest in {id} names session {}",
                session.id
            )));
        }
        self.check_artifacts(&session)?;
        Ok(session)
    }

    fn check_artifacts(&self, session: &Session) -> Result<(), PipelineError> {
        for hash in session.referenced_hashes() {
            let info = session
                .artifacts
                .get(&hash)
                .ok_or_else(|| PipelineError::ManifestCorrupt(format!("artifact {hash} is not indexed")))?;
            if !self.artifact_path(&session.id, &hash, info.kind).is_file() {
                return Err(PipelineError::ManifestCorrupt(format!("artifact {hash} is missing")));
            }
        }
        Ok(())
    }
}

pub fn parse_manifest(bytes: &[u8]) -> Result<Session, PipelineError> {
    serde_json::from_slice(bytes).map_err(|e| PipelineError::ManifestCorrupt(e.to_string()))
}

/// Writes `path.tmp`, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let tmp = tmp_path(path);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(bytes).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}
