//! Immutable UTCI snapshots on disk, one directory each, published
//! atomically: the directory is written under a temporary name, renamed into
//! place, and only then registered for readers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thermotwin_core::meteo::fmt_ts;
use thermotwin_core::stack::{load_stack, save_stack, StackError, UtciStack};
use thermotwin_core::stvit::Bbox;
use thiserror::Error;

pub const SNAPSHOT_DIR: &str = "snapshots";
pub const META_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown snapshot `{0}`")]
    NotFound(String),
    #[error("snapshot `{0}` already exists")]
    Duplicate(String),
    #[error("invalid snapshot id `{0}`")]
    InvalidId(String),
    #[error("snapshot `{id}` has no frame at {time}")]
    NoFrame { id: String, time: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("snapshot manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Stack(#[from] StackError),
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotKind {
    Simulated,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub id: String,
    pub kind: SnapshotKind,
    pub created_at: DateTime<Utc>,
    /// Region of the scene the frames cover.
    pub bbox: Bbox,
    pub cell_size: f64,
    pub times: Vec<String>,
    /// Source snapshot of a forecast.
    #[serde(default)]
    pub parent: Option<String>,
    /// Wall-clock spent producing the frames.
    #[serde(default)]
    pub seconds: Option<f64>,
    /// Simulator parameters or model checkpoint hash.
    #[serde(default)]
    pub provenance: serde_json::Value,
}

#[derive(Debug)]
pub struct Snapshot {
    pub meta: SnapshotMeta,
    pub stack: UtciStack,
    /// Frame files exactly as stored.
    pub frame_bytes: Vec<Vec<u8>>,
}

impl Snapshot {
    pub fn frame_index(&self, t: DateTime<Utc>) -> Result<usize, StoreError> {
        self.stack.position(t).ok_or_else(|| StoreError::NoFrame {
            id: self.meta.id.clone(),
            time: fmt_ts(t),
        })
    }
}

/// Draft of a snapshot before publication.
#[derive(Debug, Clone)]
pub struct NewSnapshot {
    pub kind: SnapshotKind,
    pub stack: UtciStack,
    pub bbox: Bbox,
    pub cell_size: f64,
    pub parent: Option<String>,
    pub seconds: Option<f64>,
    pub provenance: serde_json::Value,
}

pub struct Store {
    root: PathBuf,
    snapshots: RwLock<BTreeMap<String, Arc<Snapshot>>>,
    counter: AtomicU64,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn read_snapshot(dir: &Path) -> Result<Snapshot, StoreError> {
    let meta_path = dir.join(META_FILE);
    let raw = fs::read(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: SnapshotMeta = serde_json::from_slice(&raw).map_err(|e| StoreError::Manifest(e.to_string()))?;
    let (stack, index) = load_stack(dir)?;
    let frame_bytes = index
        .frames
        .iter()
        .map(|f| {
            let p = dir.join(f);
            fs::read(&p).map_err(|e| io_err(&p, e))
        })
        .collect::<Result<_, _>>()?;
    Ok(Snapshot {
        meta,
        stack,
        frame_bytes,
    })
}

impl Store {
    /// Opens `root`, loading every published snapshot and discarding
    /// leftovers of interrupted publications.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let dir = root.join(SNAPSHOT_DIR);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let mut snapshots = BTreeMap::new();
        for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let entry = entry.map_err(|e| io_err(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') {
                let _ = fs::remove_dir_all(entry.path());
                continue;
            }
            if entry.path().is_dir() {
                let snap = read_snapshot(&entry.path())?;
                snapshots.insert(snap.meta.id.clone(), Arc::new(snap));
            }
        }
        Ok(Self {
            root,
            snapshots: RwLock::new(snapshots),
            counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn get(&self, id: &str) -> Result<Arc<Snapshot>, StoreError> {
        self.snapshots
            .read()
            .expect("store lock")
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.into()))
    }

    pub fn list(&self) -> Vec<SnapshotMeta> {
        let mut metas: Vec<SnapshotMeta> = self
            .snapshots
            .read()
            .expect("store lock")
            .values()
            .map(|s| s.meta.clone())
            .collect();
        metas.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        metas
    }

    /// Fresh id of the form `<kind>-<utc stamp>-<counter>`.
    pub fn next_id(&self, kind: SnapshotKind) -> String {
        let kind = match kind {
            SnapshotKind::Simulated => "sim",
            SnapshotKind::Predicted => "pred",
        };
        loop {
            let n = self.counter.fetch_add(1, Ordering::Relaxed);
            let id = format!("{kind}-{}-{n}", Utc::now().format("%Y%m%dT%H%M%S"));
            if !self.snapshots.read().expect("store lock").contains_key(&id) {
                return id;
            }
        }
    }

    /// Writes and registers a snapshot. Readers see either nothing or the
    /// complete snapshot.
    pub fn publish(&self, id: Option<String>, draft: NewSnapshot) -> Result<Arc<Snapshot>, StoreError> {
        let id = id.unwrap_or_else(|| self.next_id(draft.kind));
        if !valid_id(&id) {
            return Err(StoreError::InvalidId(id));
        }
        if self.snapshots.read().expect("store lock").contains_key(&id) {
            return Err(StoreError::Duplicate(id));
        }
        let base = self.root.join(SNAPSHOT_DIR);
        let staging = base.join(format!(".staging-{id}"));
        let target = base.join(&id);
        if target.exists() {
            return Err(StoreError::Duplicate(id));
        }
        let _ = fs::remove_dir_all(&staging);
        save_stack(&draft.stack, &staging, draft.cell_size, draft.provenance.clone())?;
        let meta = SnapshotMeta {
            id: id.clone(),
            kind: draft.kind,
            created_at: Utc::now(),
            bbox: draft.bbox,
            cell_size: draft.cell_size,
            times: draft.stack.times().iter().map(|&t| fmt_ts(t)).collect(),
            parent: draft.parent,
            seconds: draft.seconds,
            provenance: draft.provenance,
        };
        let meta_path = staging.join(META_FILE);
        fs::write(&meta_path, serde_json::to_vec_pretty(&meta).expect("meta serializes"))
            .map_err(|e| io_err(&meta_path, e))?;
        fs::rename(&staging, &target).map_err(|e| io_err(&target, e))?;
        let snap = Arc::new(read_snapshot(&target)?);
        let mut map = self.snapshots.write().expect("store lock");
        if map.contains_key(&id) {
            return Err(StoreError::Duplicate(id));
        }
        map.insert(id, snap.clone());
        Ok(snap)
    }
}
