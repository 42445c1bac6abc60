//! Persistent checkpoints for workflow graphs and optimizer state, plus a
//! small in-process cache for transient values.
//!
//! A checkpoint is one file holding one canonically serialized
//! [`CheckpointRecord`]. Canonical means objects are written with sorted
//! keys and no insignificant whitespace, so equal records always produce
//! identical bytes and the content hash embedded in the id is stable.
//! Writes go to a temp file first and are renamed into place, so readers
//! never observe a partial file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Version stamped into new records; loading refuses anything newer.
pub const SCHEMA_VERSION: u32 = 1;

const CKPT_EXT: &str = "ckpt";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint not found: {0}")]
    NotFound(String),
    #[error("checkpoint schema version {found} is newer than supported version {supported}")]
    SchemaVersionTooNew { found: u32, supported: u32 },
    #[error("corrupt checkpoint payload: {0}")]
    CorruptPayload(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

/// What a checkpoint snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    WorkflowGraph,
    OptimizerState,
}

impl CheckpointKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CheckpointKind::WorkflowGraph => "workflow_graph",
            CheckpointKind::OptimizerState => "optimizer_state",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub kind: CheckpointKind,
    pub created_at: DateTime<Utc>,
    pub schema_version: u32,
    pub payload: Value,
}

impl CheckpointRecord {
    /// Wraps a payload with the current schema version and creation time.
    /// Creation time is truncated to microseconds so the RFC 3339 text form
    /// round-trips exactly.
    pub fn new(kind: CheckpointKind, payload: Value) -> Self {
        let now = Utc::now();
        let created_at = Utc
            .timestamp_micros(now.timestamp_micros())
            .single()
            .unwrap_or(now);
        CheckpointRecord { kind, created_at, schema_version: SCHEMA_VERSION, payload }
    }
}

// === canonical serialization ===

/// Serializes a JSON value with object keys sorted and no extra whitespace.
/// Equal values yield identical bytes regardless of how their maps were
/// built, which makes content hashes meaningful.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let sorted: BTreeMap<&String, &Value> = map.iter().collect();
            out.push('{');
            for (i, (key, val)) in sorted.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}:", Value::String(key.clone()));
                write_canonical(val, out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => {
            let _ = write!(out, "{scalar}");
        }
    }
}

/// Canonical form of any serializable value. Convenience over
/// [`canonical_json`] for structs.
pub fn canonical_string<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable value");
    canonical_json(&v)
}

fn content_hash8(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(8);
    for byte in &digest[..4] {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

// Save timestamps must be strictly increasing within a process so that two
// back-to-back saves of an identical record still get distinct ids.
static LAST_SAVE_NS: AtomicU64 = AtomicU64::new(0);

fn next_save_instant() -> DateTime<Utc> {
    let now = Utc::now();
    let now_ns = now.timestamp_nanos_opt().unwrap_or(0).max(0) as u64;
    let ns = LAST_SAVE_NS
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |last| {
            Some(now_ns.max(last + 1))
        })
        .map(|last| now_ns.max(last + 1))
        .unwrap_or(now_ns);
    Utc.timestamp_nanos(ns as i64)
}

// === persistence ===

/// Writes the record to `dir` atomically and returns its id. The id embeds
/// the kind, a nanosecond save timestamp, and the first eight hex digits of
/// the content hash: `<kind>-<timestamp>-<hash8>`.
pub fn save_checkpoint(record: &CheckpointRecord, dir: &Path) -> Result<String, CheckpointError> {
    std::fs::create_dir_all(dir)?;
    let bytes = canonical_string(record);
    let stamp = next_save_instant().format("%Y%m%dT%H%M%S%.9fZ");
    let id = format!("{}-{}-{}", record.kind.as_str(), stamp, content_hash8(bytes.as_bytes()));

    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(format!("{id}.{CKPT_EXT}")))
        .map_err(|e| CheckpointError::Io(e.error))?;
    Ok(id)
}

/// Reads the record saved under `id`, verifying the schema version and the
/// content hash the id carries.
pub fn load_checkpoint(id: &str, dir: &Path) -> Result<CheckpointRecord, CheckpointError> {
    let path = dir.join(format!("{id}.{CKPT_EXT}"));
    if !path.exists() {
        return Err(CheckpointError::NotFound(id.to_string()));
    }
    let bytes = std::fs::read_to_string(&path)?;

    if let Some(expected) = id.rsplit('-').next() {
        let actual = content_hash8(bytes.as_bytes());
        if expected.len() == 8 && actual != expected {
            return Err(CheckpointError::CorruptPayload(format!(
                "content hash mismatch (expected {expected}, found {actual})"
            )));
        }
    }

    let record: CheckpointRecord = serde_json::from_str(&bytes)
        .map_err(|e| CheckpointError::CorruptPayload(e.to_string()))?;
    if record.schema_version > SCHEMA_VERSION {
        return Err(CheckpointError::SchemaVersionTooNew {
            found: record.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    Ok(record)
}

/// Ids of every checkpoint in `dir`, sorted ascending. Because ids embed the
/// save timestamp, this is also chronological order per kind.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<String>, CheckpointError> {
    let mut ids = Vec::new();
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ids),
        Err(e) => return Err(e.into()),
    };
    for entry in entries {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(id) = name.strip_suffix(&format!(".{CKPT_EXT}")) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

// === in-process cache ===

/// Thread-safe transient key/value store. Values live only as long as the
/// process; use checkpoints for anything that must survive a restart.
#[derive(Debug, Default)]
pub struct MemoryCache {
    entries: Mutex<BTreeMap<String, Value>>,
}

impl MemoryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&self, key: impl Into<String>, value: Value) {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).get(key).cloned()
    }

    pub fn remove(&self, key: &str) -> Option<Value> {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).remove(key)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn canonical_json_sorts_keys_recursively() {
        let v = json!({"b": 1, "a": {"z": [3, {"y": 2, "x": 1}], "a": null}});
        assert_eq!(
            canonical_json(&v),
            r#"{"a":{"a":null,"z":[3,{"x":1,"y":2}]},"b":1}"#
        );
    }

    #[test]
    fn round_trip_returns_identical_record() {
        let dir = tempfile::tempdir().unwrap();
        let record = CheckpointRecord::new(
            CheckpointKind::WorkflowGraph,
            json!({"nodes": ["a", "b"], "edges": [{"source": "a", "target": "b"}]}),
        );
        let id = save_checkpoint(&record, dir.path()).unwrap();
        let loaded = load_checkpoint(&id, dir.path()).unwrap();
        assert_eq!(loaded, record);
        assert!(id.starts_with("workflow_graph-"));
    }

    #[test]
    fn two_saves_of_one_record_get_distinct_ids() {
        let dir = tempfile::tempdir().unwrap();
        let record = CheckpointRecord::new(CheckpointKind::OptimizerState, json!({"round": 3}));
        let first = save_checkpoint(&record, dir.path()).unwrap();
        let second = save_checkpoint(&record, dir.path()).unwrap();
        assert_ne!(first, second);
        assert_eq!(load_checkpoint(&first, dir.path()).unwrap(), record);
        assert_eq!(load_checkpoint(&second, dir.path()).unwrap(), record);
        assert_eq!(list_checkpoints(dir.path()).unwrap().len(), 2);
    }

    #[test]
    fn unknown_id_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_checkpoint("optimizer_state-nope-00000000", dir.path()),
            Err(CheckpointError::NotFound(_))
        ));
    }

    #[test]
    fn newer_schema_version_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut record = CheckpointRecord::new(CheckpointKind::OptimizerState, json!({}));
        record.schema_version = SCHEMA_VERSION + 1;
        let id = save_checkpoint(&record, dir.path()).unwrap();
        assert!(matches!(
            load_checkpoint(&id, dir.path()),
            Err(CheckpointError::SchemaVersionTooNew { .. })
        ));
    }

    #[test]
    fn tampered_payload_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let record = CheckpointRecord::new(CheckpointKind::OptimizerState, json!({"k": 1}));
        let id = save_checkpoint(&record, dir.path()).unwrap();
        let path = dir.path().join(format!("{id}.ckpt"));
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replace("\"k\":1", "\"k\":2");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_checkpoint(&id, dir.path()),
            Err(CheckpointError::CorruptPayload(_))
        ));
    }

    #[test]
    fn unwritable_dir_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocked = dir.path().join("blocked");
        std::fs::create_dir(&blocked).unwrap();
        let mut perms = std::fs::metadata(&blocked).unwrap().permissions();
        use std::os::unix::fs::PermissionsExt;
        perms.set_mode(0o555);
        std::fs::set_permissions(&blocked, perms).unwrap();

        let record = CheckpointRecord::new(CheckpointKind::OptimizerState, json!({}));
        let result = save_checkpoint(&record, &blocked);
        // Root bypasses permission bits; only assert when the bit held.
        if !nix_is_root() {
            assert!(matches!(result, Err(CheckpointError::Io(_))));
        }

        let mut perms = std::fs::metadata(&blocked).unwrap().permissions();
        perms.set_mode(0o755);
        std::fs::set_permissions(&blocked, perms).unwrap();
    }

    fn nix_is_root() -> bool {
        unsafe { libc::geteuid() == 0 }
    }

    fn json_value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::from),
            any::<i64>().prop_map(Value::from),
            (-1.0e9f64..1.0e9).prop_map(Value::from),
            "[a-zA-Z0-9 _.-]{0,12}".prop_map(Value::from),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
                prop::collection::btree_map("[a-z_]{1,8}", inner, 0..4)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        })
    }

    proptest! {
        #[test]
        fn any_payload_round_trips(payload in json_value()) {
            let dir = tempfile::tempdir().unwrap();
            let record = CheckpointRecord::new(CheckpointKind::WorkflowGraph, payload);
            let id = save_checkpoint(&record, dir.path()).unwrap();
            let loaded = load_checkpoint(&id, dir.path()).unwrap();
            prop_assert_eq!(loaded, record);
        }

        #[test]
        fn canonical_form_is_construction_order_independent(payload in json_value()) {
            let text = canonical_json(&payload);
            let reparsed: Value = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(canonical_json(&reparsed), text);
        }
    }

    #[test]
    fn cache_is_shared_across_threads() {
        let cache = MemoryCache::new();
        std::thread::scope(|scope| {
            for i in 0..8 {
                let cache = &cache;
                scope.spawn(move || cache.put(format!("k{i}"), json!(i)));
            }
        });
        assert_eq!(cache.len(), 8);
        assert_eq!(cache.get("k3"), Some(json!(3)));
        assert_eq!(cache.remove("k3"), Some(json!(3)));
        assert!(cache.get("k3").is_none());
    }
}
