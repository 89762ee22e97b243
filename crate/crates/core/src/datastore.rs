//! Experiment manifest: which environments exist, where their maps and run
//! logs live, and what has been computed for them so far.
//!
//! Paths inside a manifest are resolved relative to the manifest's
//! directory.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, FEATURE_NAMES};
use crate::models::{Dataset, DatasetRow, ModelError, Target};
use crate::trajectory::{PerformanceVector, RunLog, TrajectoryError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatastoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a valid manifest: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported manifest schema_version {found} (this build reads {SCHEMA_VERSION})")]
    SchemaMismatch { found: u32 },
    #[error("duplicate environment id `{0}`")]
    DuplicateEnv(String),
    #[error("missing files: {}", format_dangling(.0))]
    Dangling(Vec<(String, PathBuf)>),
    #[error("incomplete environments: {}", format_incomplete(.0))]
    Incomplete(Vec<(String, Vec<&'static str>)>),
    #[error("{path} is locked by another writer (remove {lock} if stale)")]
    Locked { path: PathBuf, lock: PathBuf },
    #[error("environment `{env}`, run {path}: {source}")]
    Run {
        env: String,
        path: PathBuf,
        #[source]
        source: TrajectoryError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn format_dangling(v: &[(String, PathBuf)]) -> String {
    v.iter()
        .map(|(e, p)| format!("{e}: {}", p.display()))
        .collect::<Vec<_>>()
        .join("; ")
}

fn format_incomplete(v: &[(String, Vec<&'static str>)]) -> String {
    v.iter()
        .map(|(e, s)| format!("{e} (missing {})", s.join(", ")))
        .collect::<Vec<_>>()
        .join("; ")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatastoreError + '_ {
    move |source| DatastoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentRecord {
    pub env_id: String,
    /// Occupancy image (PGM/PNG), relative to the manifest.
    pub map: PathBuf,
    /// Metres per pixel; falls back to the map's sidecar when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
    /// Exploration start in metres; defaults to the interior centroid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<[f64; 2]>,
    /// Run logs (CSV), relative to the manifest.
    #[serde(default)]
    pub runs: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub performance: Option<PerformanceVector>,
}

impl EnvironmentRecord {
    pub fn new(env_id: impl Into<String>, map: impl Into<PathBuf>) -> Self {
        Self {
            env_id: env_id.into(),
            map: map.into(),
            resolution: None,
            start: None,
            runs: Vec::new(),
            features: None,
            performance: None,
        }
    }

    /// Stages whose output is not yet recorded.
    pub fn missing_stages(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.features.is_none() {
            out.push("features");
        }
        if self.performance.is_none() {
            out.push("performance");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub toolkit_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<String>,
    #[serde(default)]
    pub environments: Vec<EnvironmentRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            created: None,
            environments: Vec::new(),
        }
    }
}

impl Manifest {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, DatastoreError> {
        serde_json::from_str(text).map_err(|source| DatastoreError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises") + "\n"
    }

    pub fn get(&self, env_id: &str) -> Option<&EnvironmentRecord> {
        self.environments.iter().find(|e| e.env_id == env_id)
    }

    pub fn get_mut(&mut self, env_id: &str) -> Option<&mut EnvironmentRecord> {
        self.environments.iter_mut().find(|e| e.env_id == env_id)
    }

    /// Schema and id checks that need no file system access.
    pub fn check(&self) -> Result<(), DatastoreError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(DatastoreError::SchemaMismatch {
                found: self.schema_version,
            });
        }
        let mut seen = HashSet::new();
        for e in &self.environments {
            if !seen.insert(e.env_id.as_str()) {
                return Err(DatastoreError::DuplicateEnv(e.env_id.clone()));
            }
        }
        Ok(())
    }

    /// Every referenced file that does not exist, with its environment.
    pub fn dangling(&self, base: &Path) -> Vec<(String, PathBuf)> {
        let mut out = Vec::new();
        for e in &self.environments {
            for p in std::iter::once(&e.map).chain(&e.runs) {
                if !base.join(p).is_file() {
                    out.push((e.env_id.clone(), p.clone()));
                }
            }
        }
        out
    }
}

/// Directory that relative manifest paths resolve against.
pub fn manifest_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Parses and fully checks a manifest without modifying anything.
pub fn validate_manifest(path: &Path) -> Result<Manifest, DatastoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let m = Manifest::from_json(&text, path)?;
    m.check()?;
    let dangling = m.dangling(&manifest_dir(path));
    if !dangling.is_empty() {
        return Err(DatastoreError::Dangling(dangling));
    }
    Ok(m)
}

/// Loads every run log of a record.
pub fn load_runs(record: &EnvironmentRecord, base: &Path) -> Result<Vec<RunLog>, DatastoreError> {
    record
        .runs
        .iter()
        .map(|p| {
            RunLog::load(&base.join(p)).map_err(|source| DatastoreError::Run {
                env: record.env_id.clone(),
                path: p.clone(),
                source,
            })
        })
        .collect()
}

/// One dataset row per environment, sorted by id, with every feature column
/// and all four performance components.
pub fn assemble_dataset(m: &Manifest) -> Result<Dataset, DatastoreError> {
    let incomplete: Vec<_> = m
        .environments
        .iter()
        .filter_map(|e| {
            let missing = e.missing_stages();
            (!missing.is_empty()).then(|| (e.env_id.clone(), missing))
        })
        .collect();
    if !incomplete.is_empty() {
        return Err(DatastoreError::Incomplete(incomplete));
    }
    let mut envs: Vec<&EnvironmentRecord> = m.environments.iter().collect();
    envs.sort_by(|a, b| a.env_id.cmp(&b.env_id));
    let rows = envs
        .into_iter()
        .map(|e| {
            let f = e.features.as_ref().expect("checked above");
            let p = e.performance.as_ref().expect("checked above");
            DatasetRow {
                env_id: e.env_id.clone(),
                features: f.values().to_vec(),
                targets: Target::ALL.iter().map(|t| t.of(p)).collect(),
            }
        })
        .collect();
    Ok(Dataset::new(
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        Target::ALL.to_vec(),
        rows,
    )?)
}

/// Exclusive writer access to a file, held through a sibling `.lock` file
/// created atomically. Released on drop.
#[derive(Debug)]
pub struct WriteLock {
    lock: PathBuf,
}

impl WriteLock {
    pub fn acquire(path: &Path) -> Result<Self, DatastoreError> {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".lock");
        let lock = path.with_file_name(name);
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { lock })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(DatastoreError::Locked {
                path: path.to_path_buf(),
                lock,
            }),
            Err(e) => Err(io_err(&lock)(e)),
        }
    }

    pub fn path(&self) -> &Path {
        &self.lock
    }
}

impl Drop for WriteLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Writes `bytes` via a temporary file and rename, skipping the write when
/// the file already holds exactly these bytes. Returns whether it wrote.
pub fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool, DatastoreError> {
    if fs::read(path).map(|old| old == bytes).unwrap_or(false) {
        return Ok(false);
    }
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(true)
}

/// Saves a manifest under the writer lock.
pub fn save_manifest(m: &Manifest, path: &Path) -> Result<bool, DatastoreError> {
    m.check()?;
    let _lock = WriteLock::acquire(path)?;
    write_if_changed(path, m.to_json().as_bytes())
}
