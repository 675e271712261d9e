use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use super::record::ExperimentRecord;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("experiment `{0}` already exists")]
    Exists(String),
    #[error("store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("store encoding: {0}")]
    Encoding(#[from] serde_json::Error),
}

/// Durable experiment records and artifacts. Every operation is atomic per
/// record.
pub trait ExperimentStore: Send + Sync {
    /// Persists a new record; fails if the id exists.
    fn create(&self, record: &ExperimentRecord) -> Result<(), StoreError>;
    fn save(&self, record: &ExperimentRecord) -> Result<(), StoreError>;
    fn load(&self, experiment_id: &str) -> Result<Option<ExperimentRecord>, StoreError>;
    fn load_all(&self) -> Result<Vec<ExperimentRecord>, StoreError>;
    fn put_artifact(&self, experiment_id: &str, node_id: &str, name: &str, bytes: &[u8]) -> Result<(), StoreError>;
    fn get_artifact(&self, experiment_id: &str, node_id: &str, name: &str) -> Result<Option<Vec<u8>>, StoreError>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    records: Mutex<BTreeMap<String, ExperimentRecord>>,
    artifacts: Mutex<HashMap<(String, String, String), Vec<u8>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ExperimentStore for MemoryStore {
    fn create(&self, record: &ExperimentRecord) -> Result<(), StoreError> {
        let mut recs = self.records.lock().unwrap();
        if recs.contains_key(record.id()) {
            return Err(StoreError::Exists(record.id().to_string()));
        }
        recs.insert(record.id().to_string(), record.clone());
        Ok(())
    }

    fn save(&self, record: &ExperimentRecord) -> Result<(), StoreError> {
        self.records.lock().unwrap().insert(record.id().to_string(), record.clone());
        Ok(())
    }

    fn load(&self, experiment_id: &str) -> Result<Option<ExperimentRecord>, StoreError> {
        Ok(self.records.lock().unwrap().get(experiment_id).cloned())
    }

    fn load_all(&self) -> Result<Vec<ExperimentRecord>, StoreError> {
        Ok(self.records.lock().unwrap().values().cloned().collect())
    }

    fn put_artifact(&self, experiment_id: &str, node_id: &str, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        self.artifacts
            .lock()
            .unwrap()
            .insert((experiment_id.into(), node_id.into(), name.into()), bytes.to_vec());
        Ok(())
    }

    fn get_artifact(&self, experiment_id: &str, node_id: &str, name: &str) -> Result<Option<Vec<u8>>, StoreError> {
        Ok(self
            .artifacts
            .lock()
            .unwrap()
            .get(&(experiment_id.into(), node_id.into(), name.into()))
            .cloned())
    }
}

/// One JSON document per experiment under `<root>/experiments`, written via
/// rename so readers never see a torn record. Artifacts live under
/// `<root>/artifacts/<exp>/<node>/<name>`.
#[derive(Debug)]
pub struct FileStore {
    root: PathBuf,
    // Serializes create() so two submits of one name cannot both succeed.
    create_lock: Mutex<()>,
}

fn write_atomic(path: &Path, data: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(data)?;
        f.sync_data()?;
    }
    std::fs::rename(&tmp, path)
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(root.join("experiments"))?;
        std::fs::create_dir_all(root.join("artifacts"))?;
        Ok(Self { root, create_lock: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record_path(&self, id: &str) -> PathBuf {
        self.root.join("experiments").join(format!("{id}.json"))
    }

    fn artifact_path(&self, exp: &str, node: &str, name: &str) -> PathBuf {
        self.root.join("artifacts").join(exp).join(node).join(name)
    }
}

impl ExperimentStore for FileStore {
    fn create(&self, record: &ExperimentRecord) -> Result<(), StoreError> {
        let _g = self.create_lock.lock().unwrap();
        let path = self.record_path(record.id());
        if path.exists() {
            return Err(StoreError::Exists(record.id().to_string()));
        }
        write_atomic(&path, &serde_json::to_vec(record)?)?;
        Ok(())
    }

    fn save(&self, record: &ExperimentRecord) -> Result<(), StoreError> {
        write_atomic(&self.record_path(record.id()), &serde_json::to_vec(record)?)?;
        Ok(())
    }

    fn load(&self, experiment_id: &str) -> Result<Option<ExperimentRecord>, StoreError> {
        match std::fs::read(self.record_path(experiment_id)) {
            Ok(b) => Ok(Some(serde_json::from_slice(&b)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn load_all(&self) -> Result<Vec<ExperimentRecord>, StoreError> {
        let mut paths: Vec<_> = std::fs::read_dir(self.root.join("experiments"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths
            .into_iter()
            .map(|p| Ok(serde_json::from_slice(&std::fs::read(p)?)?))
            .collect()
    }

    fn put_artifact(&self, experiment_id: &str, node_id: &str, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let path = self.artifact_path(experiment_id, node_id, name);
        std::fs::create_dir_all(path.parent().expect("artifact path has a parent"))?;
        write_atomic(&path, bytes)?;
        Ok(())
    }

    fn get_artifact(&self, experiment_id: &str, node_id: &str, name: &str) -> Result<Option<Vec<u8>>, StoreError> {
        match std::fs::read(self.artifact_path(experiment_id, node_id, name)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Experiment, NodeDescriptor, NodeKind, Pipeline, TaskSpec};

    fn record(id: &str) -> ExperimentRecord {
        let p = Pipeline::new("p").then([TaskSpec::sleep(0.0)]).unwrap();
        ExperimentRecord::new(
            Experiment::new(id).map(&p, &[NodeDescriptor::new("n", NodeKind::Simulated, "sim")]).unwrap(),
        )
    }

    fn exercise(store: &dyn ExperimentStore) {
        store.create(&record("a")).unwrap();
        assert!(matches!(store.create(&record("a")), Err(StoreError::Exists(_))));
        let mut r = store.load("a").unwrap().unwrap();
        r.errors.push("x".into());
        store.save(&r).unwrap();
        assert_eq!(store.load("a").unwrap().unwrap(), r);
        assert!(store.load("b").unwrap().is_none());
        store.create(&record("b")).unwrap();
        assert_eq!(store.load_all().unwrap().len(), 2);
        store.put_artifact("a", "n", "f.pcap", b"abc").unwrap();
        assert_eq!(store.get_artifact("a", "n", "f.pcap").unwrap().unwrap(), b"abc");
        assert!(store.get_artifact("a", "n", "g").unwrap().is_none());
    }

    #[test]
    fn memory_store() {
        exercise(&MemoryStore::new());
    }

    #[test]
    fn file_store_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        exercise(&FileStore::open(dir.path()).unwrap());
        let reopened = FileStore::open(dir.path()).unwrap();
        assert_eq!(reopened.load("a").unwrap().unwrap().errors, ["x"]);
    }
}
