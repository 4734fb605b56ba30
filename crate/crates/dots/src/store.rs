//! Append-only run store: content-addressed artifact objects, one envelope
//! file per run as the commit point, and an `index.jsonl` listing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use dots_core::clock::EpochMillis;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    Simulation,
    Probe,
    Level1,
    Level2,
    Level3,
    ErrorTest,
    HumanSession,
    Comparison,
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Namespace {
    Evaluation,
    Monitoring,
}

impl Namespace {
    pub fn as_str(self) -> &'static str {
        match self {
            Namespace::Evaluation => "evaluation",
            Namespace::Monitoring => "monitoring",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub digest: String,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunEnvelope {
    pub run_id: String,
    pub kind: RunKind,
    pub namespace: Namespace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_id: Option<String>,
    pub model_version: String,
    pub created_at: EpochMillis,
    /// Artifact name (`transcript`, `extraction`, `dots`, `report`, ...)
    /// to stored object.
    pub artifacts: BTreeMap<String, ArtifactRef>,
    /// Earlier run this one corrects.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<String>,
}

/// A run waiting to be committed.
#[derive(Debug, Clone)]
pub struct RunDraft {
    pub run_id: String,
    pub kind: RunKind,
    pub namespace: Namespace,
    pub case_id: Option<String>,
    pub model_version: String,
    pub created_at: EpochMillis,
    pub supersedes: Option<String>,
    pub artifacts: Vec<(String, Vec<u8>)>,
}

impl RunDraft {
    pub fn new(run_id: &str, kind: RunKind, namespace: Namespace, model_version: &str, created_at: EpochMillis) -> Self {
        Self {
            run_id: run_id.into(),
            kind,
            namespace,
            case_id: None,
            model_version: model_version.into(),
            created_at,
            supersedes: None,
            artifacts: Vec::new(),
        }
    }

    pub fn case(mut self, case_id: &str) -> Self {
        self.case_id = Some(case_id.into());
        self
    }

    /// Marks this run as a correction of an earlier one.
    pub fn supersedes(mut self, run_id: &str) -> Self {
        self.supersedes = Some(run_id.into());
        self
    }

    pub fn artifact(mut self, name: &str, bytes: impl Into<Vec<u8>>) -> Self {
        self.artifacts.push((name.into(), bytes.into()));
        self
    }

    pub fn json_artifact<T: Serialize>(self, name: &str, value: &T) -> Self {
        let bytes = serde_json::to_vec_pretty(value).unwrap_or_default();
        self.artifact(name, bytes)
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunFilter {
    pub from: Option<EpochMillis>,
    pub to: Option<EpochMillis>,
    pub kind: Option<RunKind>,
    pub namespace: Option<Namespace>,
    pub model_version: Option<String>,
    pub case_id: Option<String>,
}

impl RunFilter {
    pub fn matches(&self, e: &RunEnvelope) -> bool {
        self.from.is_none_or(|t| e.created_at >= t)
            && self.to.is_none_or(|t| e.created_at < t)
            && self.kind.is_none_or(|k| e.kind == k)
            && self.namespace.is_none_or(|n| e.namespace == n)
            && self.model_version.as_ref().is_none_or(|v| &e.model_version == v)
            && self.case_id.as_ref().is_none_or(|c| e.case_id.as_ref() == Some(c))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("run id {0:?} already exists")]
    DuplicateRunId(String),
    #[error("storage full")]
    StorageFull,
    #[error("run {0:?} not found")]
    NotFound(String),
    #[error("run {0:?} belongs to another namespace")]
    Forbidden(String),
    #[error("artifact {name:?} missing from run {run_id:?}")]
    MissingArtifact { run_id: String, name: String },
    #[error("invalid run id {0:?}")]
    InvalidRunId(String),
    #[error("object {0} is corrupt")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    if source.kind() == ErrorKind::StorageFull {
        StoreError::StorageFull
    } else {
        StoreError::Io { path: path.into(), source }
    }
}

struct Inner {
    root: PathBuf,
    quota: Option<u64>,
    envelopes: BTreeMap<String, RunEnvelope>,
    used: u64,
}

/// Handle to a store directory. Cloning shares the writer lock.
#[derive(Clone)]
pub struct RunStore {
    inner: Arc<Mutex<Inner>>,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn valid_run_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 200 && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.:".contains(c)) && !id.starts_with('.')
}

fn write_atomic(path: &Path, bytes: &[u8], create_new: bool) -> Result<(), StoreError> {
    let parent = path.parent().expect("store paths have parents");
    fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    let tmp = parent.join(format!(".tmp-{}-{}", std::process::id(), path.file_name().unwrap().to_string_lossy()));
    {
        let mut f = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    if create_new && path.exists() {
        let _ = fs::remove_file(&tmp);
        return Err(StoreError::DuplicateRunId(path.file_stem().unwrap().to_string_lossy().into()));
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

impl RunStore {
    /// Opens (creating if needed) a store, loads all envelopes and removes
    /// objects no envelope references, which are left behind by commits
    /// interrupted before their envelope was written.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["objects", "envelopes"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
        }
        let envelopes = Self::scan(&root, true)?;
        let store = Self { inner: Arc::new(Mutex::new(Inner { root, quota: None, envelopes, used: 0 })) };
        store.gc()?;
        store.reconcile_index()?;
        Ok(store)
    }

    fn scan(root: &Path, clean_tmp: bool) -> Result<BTreeMap<String, RunEnvelope>, StoreError> {
        let mut envelopes = BTreeMap::new();
        for ns in [Namespace::Evaluation, Namespace::Monitoring] {
            let dir = root.join("envelopes").join(ns.as_str());
            let Ok(entries) = fs::read_dir(&dir) else { continue };
            for entry in entries.filter_map(Result::ok) {
                let path = entry.path();
                if path.extension().is_some_and(|x| x == "json") && !path.file_name().unwrap().to_string_lossy().starts_with('.') {
                    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
                    let env: RunEnvelope = serde_json::from_slice(&bytes)?;
                    envelopes.insert(env.run_id.clone(), env);
                } else if clean_tmp && path.file_name().unwrap().to_string_lossy().starts_with(".tmp-") {
                    let _ = fs::remove_file(&path);
                }
            }
        }
        Ok(envelopes)
    }

    /// Picks up envelopes committed by other processes since the last scan.
    pub fn refresh(&self) -> Result<usize, StoreError> {
        let root = self.root();
        let found = Self::scan(&root, false)?;
        let mut inner = self.lock();
        let before = inner.envelopes.len();
        for (id, env) in found {
            inner.envelopes.entry(id).or_insert(env);
        }
        Ok(inner.envelopes.len() - before)
    }

    /// Follows the supersede chain from `run_id` to its newest correction.
    pub fn resolve(&self, run_id: &str) -> Option<RunEnvelope> {
        let inner = self.lock();
        let mut current = inner.envelopes.get(run_id)?.clone();
        loop {
            let next = inner
                .envelopes
                .values()
                .filter(|e| e.supersedes.as_deref() == Some(current.run_id.as_str()))
                .max_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.run_id.cmp(&b.run_id)));
            match next {
                Some(n) if n.run_id != run_id => current = n.clone(),
                _ => return Some(current),
            }
        }
    }

    /// Refuses commits that would grow the object store past `bytes`.
    pub fn with_quota(self, bytes: u64) -> Self {
        self.lock().quota = Some(bytes);
        self
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn root(&self) -> PathBuf {
        self.lock().root.clone()
    }

    fn object_path(root: &Path, digest: &str) -> PathBuf {
        root.join("objects").join(&digest[..2]).join(digest)
    }

    fn envelope_path(root: &Path, ns: Namespace, run_id: &str) -> PathBuf {
        root.join("envelopes").join(ns.as_str()).join(format!("{run_id}.json"))
    }

    /// Deletes unreferenced objects and temp files; returns how many objects
    /// were removed.
    pub fn gc(&self) -> Result<usize, StoreError> {
        let mut inner = self.lock();
        let referenced: BTreeSet<String> =
            inner.envelopes.values().flat_map(|e| e.artifacts.values().map(|a| a.digest.clone())).collect();
        let objects = inner.root.join("objects");
        let mut removed = 0;
        let mut used = 0;
        for shard in fs::read_dir(&objects).map_err(|e| io_err(&objects, e))?.filter_map(Result::ok) {
            let Ok(files) = fs::read_dir(shard.path()) else { continue };
            for f in files.filter_map(Result::ok) {
                let name = f.file_name().to_string_lossy().into_owned();
                if referenced.contains(&name) {
                    used += f.metadata().map_or(0, |m| m.len());
                } else {
                    fs::remove_file(f.path()).map_err(|e| io_err(&f.path(), e))?;
                    if !name.starts_with('.') {
                        removed += 1;
                    }
                }
            }
        }
        inner.used = used;
        Ok(removed)
    }

    fn reconcile_index(&self) -> Result<(), StoreError> {
        let inner = self.lock();
        let path = inner.root.join("index.jsonl");
        let listed: BTreeSet<String> = fs::read_to_string(&path)
            .unwrap_or_default()
            .lines()
            .filter_map(|l| serde_json::from_str::<RunEnvelope>(l).ok())
            .map(|e| e.run_id)
            .collect();
        let missing: Vec<&RunEnvelope> = inner.envelopes.values().filter(|e| !listed.contains(&e.run_id)).collect();
        if missing.is_empty() {
            return Ok(());
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| io_err(&path, e))?;
        for e in missing {
            writeln!(f, "{}", serde_json::to_string(e)?).map_err(|err| io_err(&path, err))?;
        }
        Ok(())
    }

    /// Writes artifacts first and the envelope last. A crash in between
    /// leaves only unreferenced objects, collected on the next open.
    pub fn commit(&self, draft: RunDraft) -> Result<RunEnvelope, StoreError> {
        if !valid_run_id(&draft.run_id) {
            return Err(StoreError::InvalidRunId(draft.run_id));
        }
        let mut inner = self.lock();
        if inner.envelopes.contains_key(&draft.run_id) {
            return Err(StoreError::DuplicateRunId(draft.run_id));
        }
        let fresh: u64 = draft
            .artifacts
            .iter()
            .filter(|(_, b)| !Self::object_path(&inner.root, &digest(b)).exists())
            .map(|(_, b)| b.len() as u64)
            .sum();
        if inner.quota.is_some_and(|q| inner.used + fresh > q) {
            return Err(StoreError::StorageFull);
        }
        let mut artifacts = BTreeMap::new();
        for (name, bytes) in &draft.artifacts {
            let d = digest(bytes);
            let path = Self::object_path(&inner.root, &d);
            if !path.exists() {
                write_atomic(&path, bytes, false)?;
            }
            artifacts.insert(name.clone(), ArtifactRef { digest: d, size: bytes.len() as u64 });
        }
        inner.used += fresh;
        let envelope = RunEnvelope {
            run_id: draft.run_id,
            kind: draft.kind,
            namespace: draft.namespace,
            case_id: draft.case_id,
            model_version: draft.model_version,
            created_at: draft.created_at,
            artifacts,
            supersedes: draft.supersedes,
        };
        let path = Self::envelope_path(&inner.root, envelope.namespace, &envelope.run_id);
        write_atomic(&path, &serde_json::to_vec_pretty(&envelope)?, true)?;
        let index = inner.root.join("index.jsonl");
        let mut f = OpenOptions::new().create(true).append(true).open(&index).map_err(|e| io_err(&index, e))?;
        writeln!(f, "{}", serde_json::to_string(&envelope)?).map_err(|e| io_err(&index, e))?;
        inner.envelopes.insert(envelope.run_id.clone(), envelope.clone());
        Ok(envelope)
    }

    pub fn get(&self, run_id: &str) -> Option<RunEnvelope> {
        self.lock().envelopes.get(run_id).cloned()
    }

    /// The committed envelope file, byte for byte.
    pub fn envelope_bytes(&self, run_id: &str) -> Result<Vec<u8>, StoreError> {
        let inner = self.lock();
        let env = inner.envelopes.get(run_id).ok_or_else(|| StoreError::NotFound(run_id.into()))?;
        let path = Self::envelope_path(&inner.root, env.namespace, run_id);
        fs::read(&path).map_err(|e| io_err(&path, e))
    }

    pub fn query(&self, filter: &RunFilter) -> Vec<RunEnvelope> {
        let mut out: Vec<RunEnvelope> = self.lock().envelopes.values().filter(|e| filter.matches(e)).cloned().collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.run_id.cmp(&b.run_id)));
        out
    }

    pub fn artifact(&self, envelope: &RunEnvelope, name: &str) -> Result<Vec<u8>, StoreError> {
        let art = envelope
            .artifacts
            .get(name)
            .ok_or_else(|| StoreError::MissingArtifact { run_id: envelope.run_id.clone(), name: name.into() })?;
        let path = Self::object_path(&self.lock().root, &art.digest);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        if digest(&bytes) != art.digest {
            return Err(StoreError::Corrupt(art.digest.clone()));
        }
        Ok(bytes)
    }

    pub fn artifact_json<T: for<'de> Deserialize<'de>>(&self, envelope: &RunEnvelope, name: &str) -> Result<T, StoreError> {
        Ok(serde_json::from_slice(&self.artifact(envelope, name)?)?)
    }

    /// A view restricted to one namespace.
    pub fn scoped(&self, namespace: Namespace) -> ScopedStore {
        ScopedStore { store: self.clone(), namespace }
    }
}

/// Namespace-bound access: reads and writes outside the namespace fail.
#[derive(Clone)]
pub struct ScopedStore {
    store: RunStore,
    namespace: Namespace,
}

impl ScopedStore {
    pub fn namespace(&self) -> Namespace {
        self.namespace
    }

    pub fn commit(&self, draft: RunDraft) -> Result<RunEnvelope, StoreError> {
        if draft.namespace != self.namespace {
            return Err(StoreError::Forbidden(draft.run_id));
        }
        self.store.commit(draft)
    }

    pub fn get(&self, run_id: &str) -> Result<RunEnvelope, StoreError> {
        let env = self.store.get(run_id).ok_or_else(|| StoreError::NotFound(run_id.into()))?;
        if env.namespace != self.namespace {
            return Err(StoreError::Forbidden(run_id.into()));
        }
        Ok(env)
    }

    pub fn query(&self, filter: &RunFilter) -> Vec<RunEnvelope> {
        if filter.namespace.is_some_and(|n| n != self.namespace) {
            return Vec::new();
        }
        let filter = RunFilter { namespace: Some(self.namespace), ..filter.clone() };
        self.store.query(&filter)
    }

    pub fn artifact(&self, run_id: &str, name: &str) -> Result<Vec<u8>, StoreError> {
        let env = self.get(run_id)?;
        self.store.artifact(&env, name)
    }

    pub fn artifact_json<T: for<'de> Deserialize<'de>>(&self, run_id: &str, name: &str) -> Result<T, StoreError> {
        Ok(serde_json::from_slice(&self.artifact(run_id, name)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draft(id: &str, ns: Namespace, at: EpochMillis) -> RunDraft {
        RunDraft::new(id, RunKind::Simulation, ns, "v1", at).artifact("dots", format!("{{\"id\":\"{id}\"}}"))
    }

    #[test]
    fn commit_then_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        let env = store.commit(draft("r1", Namespace::Evaluation, 5)).unwrap();
        assert_eq!(store.get("r1").unwrap(), env);
        assert_eq!(store.artifact(&env, "dots").unwrap(), b"{\"id\":\"r1\"}");
        assert!(matches!(store.commit(draft("r1", Namespace::Evaluation, 6)), Err(StoreError::DuplicateRunId(_))));
        let reopened = RunStore::open(dir.path()).unwrap();
        assert_eq!(reopened.get("r1").unwrap(), env);
    }

    #[test]
    fn orphans_are_collected_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        store.commit(draft("kept", Namespace::Evaluation, 1)).unwrap();
        let orphan = dir.path().join("objects/ab/abcdef");
        fs::create_dir_all(orphan.parent().unwrap()).unwrap();
        fs::write(&orphan, b"half written").unwrap();
        drop(store);
        let store = RunStore::open(dir.path()).unwrap();
        assert!(!orphan.exists());
        let env = store.get("kept").unwrap();
        assert!(store.artifact(&env, "dots").is_ok());
    }

    #[test]
    fn namespace_isolation() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        store.commit(draft("e", Namespace::Evaluation, 1)).unwrap();
        store.commit(draft("m", Namespace::Monitoring, 2)).unwrap();
        let mon = store.scoped(Namespace::Monitoring);
        assert!(matches!(mon.get("e"), Err(StoreError::Forbidden(_))));
        assert_eq!(mon.query(&RunFilter::default()).len(), 1);
        assert!(mon.commit(draft("x", Namespace::Evaluation, 3)).is_err());
        let filter = RunFilter { namespace: Some(Namespace::Monitoring), ..Default::default() };
        assert_eq!(store.query(&filter)[0].run_id, "m");
    }

    #[test]
    fn quota_reports_storage_full() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap().with_quota(16);
        let big = RunDraft::new("big", RunKind::Probe, Namespace::Monitoring, "v1", 0).artifact("x", vec![0u8; 64]);
        assert!(matches!(store.commit(big), Err(StoreError::StorageFull)));
        assert!(store.get("big").is_none());
    }

    #[test]
    fn range_query_and_bytes_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        for i in 0..10 {
            store.commit(draft(&format!("r{i}"), Namespace::Evaluation, i * 100)).unwrap();
        }
        let f = RunFilter { from: Some(200), to: Some(700), ..Default::default() };
        let got: Vec<String> = store.query(&f).into_iter().map(|e| e.run_id).collect();
        assert_eq!(got, ["r2", "r3", "r4", "r5", "r6"]);
        let before = store.envelope_bytes("r3").unwrap();
        store.commit(draft("r99", Namespace::Evaluation, 1)).unwrap();
        assert_eq!(store.envelope_bytes("r3").unwrap(), before);
        assert!(store.query(&RunFilter::default()).first().unwrap().run_id == "r0");
        assert!(matches!(store.commit(draft("../x", Namespace::Evaluation, 1)), Err(StoreError::InvalidRunId(_))));
    }
}
