//! Task manifests, release roots, freeze records, and release binding.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::drivers::DriverRecord;
use crate::runner::RunRecord;
pub use crate::schema::ReplayClass;
use crate::schema::{canonical_hash, hash_serialize, is_semver, CanonicalValue, Digest, SCHEMA_VERSION};

pub const ADAPTER_VERSION: &str = "1.0.0";
pub const SUITE_VERSION: &str = "0.1.0";
pub const REPLAY_HARNESS_VERSION: &str = "0.1.0";
pub const DEFAULT_SEED_POLICY: &str = "fixed-per-entry";

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("unresolved_manifest: {0}")]
    Unresolved(String),
    #[error("registry_hash_mismatch: {task_id} registered {expected}, found {found}")]
    RegistryHashMismatch {
        task_id: String,
        expected: String,
        found: String,
    },
    #[error("incomplete_freeze: {0}")]
    IncompleteFreeze(String),
    #[error("invalid_manifest: {0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error in {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
}

impl ManifestError {
    pub fn code(&self) -> &'static str {
        match self {
            ManifestError::Unresolved(_) => "unresolved_manifest",
            ManifestError::RegistryHashMismatch { .. } => "registry_hash_mismatch",
            ManifestError::IncompleteFreeze(_) => "incomplete_freeze",
            ManifestError::Invalid(_) => "invalid_manifest",
            ManifestError::Io { .. } => "io_error",
            ManifestError::Parse { .. } => "parse_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Micro,
    Web,
    Code,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Micro, Family::Web, Family::Code];

    /// Replay boundary of each family.
    pub fn replay_class(self) -> ReplayClass {
        match self {
            Family::Micro => ReplayClass::R0,
            Family::Web => ReplayClass::R1,
            Family::Code => ReplayClass::R2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Micro => "micro",
            Family::Web => "web",
            Family::Code => "code",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetContract {
    FullReset,
    SessionReset,
    Stateless,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub family: Family,
    pub task_id: String,
    pub snapshot_ref: String,
    pub reset_contract: ResetContract,
    pub verifier_id: String,
    pub adapter_version: String,
    pub replay_class: ReplayClass,
    pub schema_version: String,
    pub release_binding: String,
    #[serde(default)]
    pub family_params: BTreeMap<String, Value>,
}

impl TaskManifest {
    /// A manifest with the family's default contract and replay class.
    pub fn new(family: Family, task_id: impl Into<String>, release_binding: impl Into<String>) -> Self {
        let task_id = task_id.into();
        let (reset, verifier) = match family {
            Family::Micro => (ResetContract::Stateless, "micro-evaluator"),
            Family::Web => (ResetContract::SessionReset, "web-evaluator"),
            Family::Code => (ResetContract::FullReset, "code-verifier"),
        };
        TaskManifest {
            family,
            snapshot_ref: format!("snapshot/{}/{}", family, task_id),
            task_id,
            reset_contract: reset,
            verifier_id: verifier.to_string(),
            adapter_version: ADAPTER_VERSION.to_string(),
            replay_class: family.replay_class(),
            schema_version: SCHEMA_VERSION.to_string(),
            release_binding: release_binding.into(),
            family_params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.family_params.insert(key.to_string(), value.into());
        self
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.family_params.get(key).and_then(Value::as_str)
    }

    pub fn param_u64(&self, key: &str) -> Option<u64> {
        self.family_params.get(key).and_then(Value::as_u64)
    }

    pub fn param_f64(&self, key: &str) -> Option<f64> {
        self.family_params.get(key).and_then(Value::as_f64)
    }

    pub fn param_bool(&self, key: &str) -> Option<bool> {
        self.family_params.get(key).and_then(Value::as_bool)
    }

    /// Canonical hash over every field.
    pub fn hash(&self) -> Digest {
        hash_serialize(self).expect("manifests hold JSON-representable values")
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let bad = |m: String| Err(ManifestError::Invalid(m));
        if self.task_id.is_empty() {
            return bad("empty task_id".into());
        }
        if self.replay_class != self.family.replay_class() {
            return bad(format!(
                "{} family requires {}, manifest declares {}",
                self.family,
                self.family.replay_class(),
                self.replay_class
            ));
        }
        for (name, v) in [
            ("adapter_version", &self.adapter_version),
            ("schema_version", &self.schema_version),
        ] {
            if !is_semver(v) {
                return bad(format!("{name} {v:?} is not major.minor.patch"));
            }
        }
        Ok(())
    }
}

/// A manifest whose hash matched its registry entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedManifest {
    pub manifest: TaskManifest,
    pub hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseRoot {
    pub root_id: String,
    pub registry: BTreeMap<String, Digest>,
    pub created_at: String,
}

impl ReleaseRoot {
    pub fn new(root_id: impl Into<String>, created_at: impl Into<String>) -> Self {
        ReleaseRoot {
            root_id: root_id.into(),
            registry: BTreeMap::new(),
            created_at: created_at.into(),
        }
    }

    pub fn register(&mut self, manifest: &TaskManifest) -> Result<(), ManifestError> {
        manifest.validate()?;
        if self.registry.contains_key(&manifest.task_id) {
            return Err(ManifestError::Invalid(format!(
                "task {} already registered",
                manifest.task_id
            )));
        }
        self.registry.insert(manifest.task_id.clone(), manifest.hash());
        Ok(())
    }

    pub fn is_registered_hash(&self, hash: &Digest) -> bool {
        self.registry.values().any(|h| h == hash)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.root_id.is_empty() {
            return Err(ManifestError::Invalid("empty root_id".into()));
        }
        chrono::DateTime::parse_from_rfc3339(&self.created_at)
            .map_err(|e| ManifestError::Invalid(format!("created_at {:?}: {e}", self.created_at)))?;
        Ok(())
    }
}

pub trait ManifestStore {
    /// Load the manifest stored for `task_id`, if any.
    fn load(&self, task_id: &str) -> Result<Option<TaskManifest>, ManifestError>;
}

#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    manifests: BTreeMap<String, TaskManifest>,
}

impl MemoryStore {
    pub fn insert(&mut self, manifest: TaskManifest) {
        self.manifests.insert(manifest.task_id.clone(), manifest);
    }

    pub fn get_mut(&mut self, task_id: &str) -> Option<&mut TaskManifest> {
        self.manifests.get_mut(task_id)
    }
}

impl ManifestStore for MemoryStore {
    fn load(&self, task_id: &str) -> Result<Option<TaskManifest>, ManifestError> {
        Ok(self.manifests.get(task_id).cloned())
    }
}

/// On-disk release root: `registry.json` plus `manifests/<task_id>.json`.
#[derive(Debug, Clone)]
pub struct DirStore {
    dir: PathBuf,
}

pub const REGISTRY_FILE: &str = "registry.json";
pub const MANIFEST_DIR: &str = "manifests";

impl DirStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DirStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest_path(&self, task_id: &str) -> PathBuf {
        self.dir.join(MANIFEST_DIR).join(format!("{task_id}.json"))
    }

    pub fn save_manifest(&self, manifest: &TaskManifest) -> Result<(), ManifestError> {
        write_json(&self.manifest_path(&manifest.task_id), manifest)
    }

    pub fn save_root(&self, root: &ReleaseRoot) -> Result<(), ManifestError> {
        write_json(&self.dir.join(REGISTRY_FILE), root)
    }

    pub fn load_root(&self) -> Result<ReleaseRoot, ManifestError> {
        let root: ReleaseRoot = read_json(&self.dir.join(REGISTRY_FILE))?;
        root.validate()?;
        Ok(root)
    }

    /// Write a whole release root with its manifests.
    pub fn publish(&self, root: &ReleaseRoot, manifests: &[TaskManifest]) -> Result<(), ManifestError> {
        for m in manifests {
            self.save_manifest(m)?;
        }
        self.save_root(root)
    }
}

impl ManifestStore for DirStore {
    fn load(&self, task_id: &str) -> Result<Option<TaskManifest>, ManifestError> {
        let path = self.manifest_path(task_id);
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ManifestError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| ManifestError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ManifestError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn resolve_manifest(
    task_id: &str,
    root: &ReleaseRoot,
    store: &dyn ManifestStore,
) -> Result<ResolvedManifest, ManifestError> {
    let expected = root
        .registry
        .get(task_id)
        .ok_or_else(|| ManifestError::Unresolved(format!("{task_id} not in root {}", root.root_id)))?;
    let manifest = store
        .load(task_id)?
        .ok_or_else(|| ManifestError::Unresolved(format!("{task_id} missing from store")))?;
    let found = manifest.hash();
    if &found != expected {
        return Err(ManifestError::RegistryHashMismatch {
            task_id: task_id.to_string(),
            expected: expected.hex.clone(),
            found: found.hex,
        });
    }
    manifest.validate()?;
    Ok(ResolvedManifest { manifest, hash: found })
}

/// Versions the suite stamps onto every freeze record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionSet {
    pub suite_version: String,
    pub schema_version: String,
    pub replay_harness_version: String,
    pub seed_policy: String,
}

impl Default for VersionSet {
    fn default() -> Self {
        VersionSet {
            suite_version: SUITE_VERSION.to_string(),
            schema_version: SCHEMA_VERSION.to_string(),
            replay_harness_version: REPLAY_HARNESS_VERSION.to_string(),
            seed_policy: DEFAULT_SEED_POLICY.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeRecord {
    pub suite_version: String,
    pub manifest_hash: Digest,
    pub driver_id: String,
    pub driver_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_backend_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template_hash: Option<Digest>,
    pub parser_version: String,
    pub snapshot_digest: Digest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repo_commit: Option<String>,
    pub verifier_version: String,
    pub schema_version: String,
    pub replay_harness_version: String,
    pub setting_label: String,
    pub seed_policy: String,
}

impl FreezeRecord {
    /// Names of mandatory string fields that are empty.
    pub fn empty_fields(&self) -> Vec<&'static str> {
        [
            ("suite_version", &self.suite_version),
            ("driver_id", &self.driver_id),
            ("driver_version", &self.driver_version),
            ("parser_version", &self.parser_version),
            ("verifier_version", &self.verifier_version),
            ("schema_version", &self.schema_version),
            ("replay_harness_version", &self.replay_harness_version),
            ("setting_label", &self.setting_label),
            ("seed_policy", &self.seed_policy),
        ]
        .into_iter()
        .filter(|(_, v)| v.is_empty())
        .map(|(n, _)| n)
        .collect()
    }
}

/// Digest bound to a manifest's snapshot reference.
pub fn snapshot_digest(manifest: &TaskManifest) -> Digest {
    canonical_hash(&CanonicalValue::doc([
        ("snapshot_ref", CanonicalValue::from(manifest.snapshot_ref.as_str())),
        ("task_id", CanonicalValue::from(manifest.task_id.as_str())),
    ]))
    .expect("strings are canonical")
}

/// Verifier version bound by a manifest. Code tasks must declare one;
/// other families fall back to the adapter version of their evaluator.
pub fn verifier_version(manifest: &TaskManifest) -> Option<String> {
    match manifest.param_str("verifier_version") {
        Some(v) if !v.is_empty() => Some(v.to_string()),
        _ if manifest.family == Family::Code => None,
        _ => Some(format!("{}@{}", manifest.verifier_id, manifest.adapter_version)),
    }
}

pub fn freeze_run(
    manifest: &ResolvedManifest,
    driver: &DriverRecord,
    setting_label: &str,
    versions: &VersionSet,
) -> Result<FreezeRecord, ManifestError> {
    let m = &manifest.manifest;
    let verifier_version = verifier_version(m)
        .ok_or_else(|| ManifestError::IncompleteFreeze(format!("code task {} lacks verifier_version", m.task_id)))?;
    let freeze = FreezeRecord {
        suite_version: versions.suite_version.clone(),
        manifest_hash: manifest.hash.clone(),
        driver_id: driver.driver_id.clone(),
        driver_version: driver.driver_version.clone(),
        model_backend_id: driver.model_backend_id.clone(),
        prompt_template_hash: driver.prompt_template_hash.clone(),
        parser_version: driver.parser_version.clone(),
        snapshot_digest: snapshot_digest(m),
        repo_commit: m.param_str("repo_state").map(str::to_string),
        verifier_version,
        schema_version: versions.schema_version.clone(),
        replay_harness_version: versions.replay_harness_version.clone(),
        setting_label: setting_label.to_string(),
        seed_policy: versions.seed_policy.clone(),
    };
    let empty = freeze.empty_fields();
    if !empty.is_empty() {
        return Err(ManifestError::IncompleteFreeze(empty.join(",")));
    }
    Ok(freeze)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingViolation {
    SnapshotMismatch,
    MissingSchemaVersion,
    VersionMismatch,
    MissingVersionField,
    MissingReleaseBinding,
    MissingReplayFreeze,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "violations", rename_all = "snake_case")]
pub enum BindingStatus {
    Bound,
    Violations(Vec<BindingViolation>),
}

impl BindingStatus {
    pub fn is_bound(&self) -> bool {
        matches!(self, BindingStatus::Bound)
    }

    pub fn violations(&self) -> &[BindingViolation] {
        match self {
            BindingStatus::Bound => &[],
            BindingStatus::Violations(v) => v,
        }
    }
}

pub fn verify_binding(run: &RunRecord, root: &ReleaseRoot) -> BindingStatus {
    use BindingViolation::*;
    let mut out = Vec::new();
    if run.release_root.is_empty() || run.release_root != root.root_id {
        out.push(MissingReleaseBinding);
    }
    match &run.freeze {
        None => out.push(MissingReplayFreeze),
        Some(freeze) => {
            if !root.is_registered_hash(&freeze.manifest_hash) {
                out.push(SnapshotMismatch);
            }
            if freeze.schema_version.is_empty() {
                out.push(MissingSchemaVersion);
            } else if !crate::schema::SUPPORTED_SCHEMA_VERSIONS.contains(&freeze.schema_version.as_str()) {
                out.push(VersionMismatch);
            }
            if freeze.empty_fields().iter().any(|f| *f != "schema_version") {
                out.push(MissingVersionField);
            }
        }
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        BindingStatus::Bound
    } else {
        BindingStatus::Violations(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{DriverRecord, DriverType, EvidenceStatus};

    fn root_with(manifests: &[TaskManifest]) -> (ReleaseRoot, MemoryStore) {
        let mut root = ReleaseRoot::new("root-a", "2026-01-01T00:00:00Z");
        let mut store = MemoryStore::default();
        for m in manifests {
            root.register(m).unwrap();
            store.insert(m.clone());
        }
        (root, store)
    }

    fn driver() -> DriverRecord {
        DriverRecord::new("ctl", DriverType::Controller, EvidenceStatus::PaperFacing)
    }

    #[test]
    fn family_mapping_matches_replay_boundary() {
        assert_eq!(Family::Micro.replay_class(), ReplayClass::R0);
        assert_eq!(Family::Web.replay_class(), ReplayClass::R1);
        assert_eq!(Family::Code.replay_class(), ReplayClass::R2);
        for f in Family::ALL {
            assert_eq!(TaskManifest::new(f, "t", "r").replay_class, f.replay_class());
        }
    }

    #[test]
    fn wrong_replay_class_invalid() {
        let mut m = TaskManifest::new(Family::Web, "t", "r");
        m.replay_class = ReplayClass::R2;
        assert_eq!(m.validate().unwrap_err().code(), "invalid_manifest");
    }

    #[test]
    fn resolve_happy_path() {
        let m = TaskManifest::new(Family::Web, "web-105", "root-a");
        let (root, store) = root_with(&[m.clone()]);
        let r = resolve_manifest("web-105", &root, &store).unwrap();
        assert_eq!(r.manifest, m);
        assert_eq!(r.hash, m.hash());
    }

    #[test]
    fn resolve_absent() {
        let (root, store) = root_with(&[]);
        let err = resolve_manifest("nope", &root, &store).unwrap_err();
        assert_eq!(err.code(), "unresolved_manifest");
    }

    #[test]
    fn resolve_edited_after_registration() {
        let m = TaskManifest::new(Family::Micro, "m1", "root-a");
        let (root, mut store) = root_with(&[m]);
        store.get_mut("m1").unwrap().snapshot_ref.push('x');
        let err = resolve_manifest("m1", &root, &store).unwrap_err();
        assert_eq!(err.code(), "registry_hash_mismatch");
    }

    #[test]
    fn freeze_copies_setting_and_is_deterministic() {
        let m = TaskManifest::new(Family::Web, "web-105", "root-a");
        let (root, store) = root_with(&[m]);
        let r = resolve_manifest("web-105", &root, &store).unwrap();
        let a = freeze_run(&r, &driver(), "clean", &VersionSet::default()).unwrap();
        let b = freeze_run(&r, &driver(), "clean", &VersionSet::default()).unwrap();
        assert_eq!(a.setting_label, "clean");
        assert_eq!(a.manifest_hash, r.hash);
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn code_freeze_needs_verifier_version() {
        let m = TaskManifest::new(Family::Code, "c1", "root-a");
        let (root, store) = root_with(&[m]);
        let r = resolve_manifest("c1", &root, &store).unwrap();
        let err = freeze_run(&r, &driver(), "clean", &VersionSet::default()).unwrap_err();
        assert_eq!(err.code(), "incomplete_freeze");

        let m = TaskManifest::new(Family::Code, "c2", "root-a").with_param("verifier_version", "2.1.0");
        let (root, store) = root_with(&[m]);
        let r = resolve_manifest("c2", &root, &store).unwrap();
        assert_eq!(
            freeze_run(&r, &driver(), "clean", &VersionSet::default())
                .unwrap()
                .verifier_version,
            "2.1.0"
        );
    }

    #[test]
    fn dir_store_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let store = DirStore::new(tmp.path());
        let m = TaskManifest::new(Family::Code, "c1", "root-a")
            .with_param("verifier_version", "1.2.0")
            .with_param("test_command", "pytest -x");
        let (root, _) = root_with(&[m.clone()]);
        store.publish(&root, &[m.clone()]).unwrap();
        let loaded = store.load("c1").unwrap().unwrap();
        assert_eq!(loaded, m);
        assert_eq!(loaded.hash(), m.hash());
        assert_eq!(store.load_root().unwrap(), root);
        assert!(resolve_manifest("c1", &root, &store).is_ok());
    }

    #[test]
    fn bad_timestamp_rejected() {
        let root = ReleaseRoot::new("r", "yesterday");
        assert!(root.validate().is_err());
    }
}
