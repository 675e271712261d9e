use std::collections::{BTreeMap, HashMap};
use std::io;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::gateway::GatewayApi;
use crate::model::NodeKind;

use super::bundle::{ExecutorSettings, PipelineReport};

/// The node-local directory tasks may write into. Paths are relative to the
/// scratch root; absolute paths and `..` are rejected.
pub trait Scratch: Send + Sync {
    /// Real directory backing this scratch area, if any.
    fn root(&self) -> Option<&Path>;
    fn read(&self, path: &str) -> io::Result<Vec<u8>>;
    fn write(&self, path: &str, data: &[u8]) -> io::Result<()>;
    fn remove(&self, path: &str) -> io::Result<()>;
    fn exists(&self, path: &str) -> bool;
    fn size(&self, path: &str) -> io::Result<u64>;
    /// Every file, relative to the root, sorted.
    fn list(&self) -> Vec<String>;
    fn clear(&self) -> io::Result<()>;
}

fn relative(path: &str) -> io::Result<PathBuf> {
    let p = Path::new(path);
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::Normal(s) => out.push(s),
            Component::CurDir => {}
            _ => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    format!("path `{path}` escapes the scratch directory"),
                ))
            }
        }
    }
    if out.as_os_str().is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "empty path"));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DirScratch {
    root: PathBuf,
}

impl DirScratch {
    pub fn new(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn resolve(&self, path: &str) -> io::Result<PathBuf> {
        Ok(self.root.join(relative(path)?))
    }
}

impl Scratch for DirScratch {
    fn root(&self) -> Option<&Path> {
        Some(&self.root)
    }

    fn read(&self, path: &str) -> io::Result<Vec<u8>> {
        std::fs::read(self.resolve(path)?)
    }

    fn write(&self, path: &str, data: &[u8]) -> io::Result<()> {
        let full = self.resolve(path)?;
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(full, data)
    }

    fn remove(&self, path: &str) -> io::Result<()> {
        let full = self.resolve(path)?;
        if full.is_dir() {
            std::fs::remove_dir_all(full)
        } else {
            std::fs::remove_file(full)
        }
    }

    fn exists(&self, path: &str) -> bool {
        self.resolve(path).map(|p| p.exists()).unwrap_or(false)
    }

    fn size(&self, path: &str) -> io::Result<u64> {
        Ok(std::fs::metadata(self.resolve(path)?)?.len())
    }

    fn list(&self) -> Vec<String> {
        fn walk(dir: &Path, base: &Path, out: &mut Vec<String>) {
            let Ok(entries) = std::fs::read_dir(dir) else { return };
            for e in entries.flatten() {
                let p = e.path();
                if p.is_dir() {
                    walk(&p, base, out);
                } else if let Ok(rel) = p.strip_prefix(base) {
                    out.push(rel.to_string_lossy().into_owned());
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &self.root, &mut out);
        out.sort();
        out
    }

    fn clear(&self) -> io::Result<()> {
        for e in std::fs::read_dir(&self.root)? {
            let p = e?.path();
            if p.is_dir() {
                std::fs::remove_dir_all(p)?;
            } else {
                std::fs::remove_file(p)?;
            }
        }
        Ok(())
    }
}

/// In-memory scratch area used by simulated nodes.
#[derive(Debug, Default)]
pub struct MemScratch {
    files: Mutex<BTreeMap<String, Vec<u8>>>,
}

impl MemScratch {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(path: &str) -> io::Result<String> {
        Ok(relative(path)?.to_string_lossy().into_owned())
    }
}

impl Scratch for MemScratch {
    fn root(&self) -> Option<&Path> {
        None
    }

    fn read(&self, path: &str) -> io::Result<Vec<u8>> {
        let key = Self::key(path)?;
        self.files
            .lock()
            .unwrap()
            .get(&key)
            .cloned()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("{path}: no such file")))
    }

    fn write(&self, path: &str, data: &[u8]) -> io::Result<()> {
        self.files.lock().unwrap().insert(Self::key(path)?, data.to_vec());
        Ok(())
    }

    fn remove(&self, path: &str) -> io::Result<()> {
        let key = Self::key(path)?;
        let prefix = format!("{key}/");
        let mut files = self.files.lock().unwrap();
        let before = files.len();
        files.retain(|k, _| k != &key && !k.starts_with(&prefix));
        if files.len() == before {
            return Err(io::Error::new(io::ErrorKind::NotFound, format!("{path}: no such file")));
        }
        Ok(())
    }

    fn exists(&self, path: &str) -> bool {
        Self::key(path).map(|k| self.files.lock().unwrap().contains_key(&k)).unwrap_or(false)
    }

    fn size(&self, path: &str) -> io::Result<u64> {
        Ok(self.read(path)?.len() as u64)
    }

    fn list(&self) -> Vec<String> {
        self.files.lock().unwrap().keys().cloned().collect()
    }

    fn clear(&self) -> io::Result<()> {
        self.files.lock().unwrap().clear();
        Ok(())
    }
}

/// Durable holding area for reports that could not be delivered.
pub trait Spool: Send + Sync {
    /// Stores (or overwrites) the report; returns where it was written.
    fn put(&self, report: &PipelineReport) -> io::Result<String>;
    fn remove(&self, experiment_id: &str, node_id: &str) -> io::Result<()>;
    fn pending(&self) -> io::Result<Vec<PipelineReport>>;
}

/// One JSON document per undelivered report, `<exp>__<node>.report.json`.
#[derive(Debug, Clone)]
pub struct DirSpool {
    dir: PathBuf,
}

impl DirSpool {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn path_for(&self, experiment_id: &str, node_id: &str) -> PathBuf {
        self.dir.join(format!("{experiment_id}__{node_id}.report.json"))
    }
}

impl Spool for DirSpool {
    fn put(&self, report: &PipelineReport) -> io::Result<String> {
        let path = self.path_for(&report.experiment_id, &report.node_id);
        let tmp = path.with_extension("tmp");
        let data = serde_json::to_vec_pretty(report).map_err(io::Error::other)?;
        {
            use std::io::Write;
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&data)?;
            f.sync_data()?;
        }
        std::fs::rename(&tmp, &path)?;
        Ok(path.to_string_lossy().into_owned())
    }

    fn remove(&self, experiment_id: &str, node_id: &str) -> io::Result<()> {
        match std::fs::remove_file(self.path_for(experiment_id, node_id)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }

    fn pending(&self) -> io::Result<Vec<PipelineReport>> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".report.json"))
            .collect();
        paths.sort();
        let mut out = Vec::new();
        for p in paths {
            match std::fs::read(&p).map(|b| serde_json::from_slice::<PipelineReport>(&b)) {
                Ok(Ok(r)) => out.push(r),
                Ok(Err(e)) => tracing::warn!(path = %p.display(), error = %e, "unreadable spool entry"),
                Err(e) => tracing::warn!(path = %p.display(), error = %e, "unreadable spool entry"),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Default)]
pub struct MemSpool {
    reports: Mutex<BTreeMap<(String, String), PipelineReport>>,
}

impl MemSpool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.reports.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Spool for MemSpool {
    fn put(&self, report: &PipelineReport) -> io::Result<String> {
        let key = (report.experiment_id.clone(), report.node_id.clone());
        let loc = format!("mem://{}/{}", key.0, key.1);
        self.reports.lock().unwrap().insert(key, report.clone());
        Ok(loc)
    }

    fn remove(&self, experiment_id: &str, node_id: &str) -> io::Result<()> {
        self.reports.lock().unwrap().remove(&(experiment_id.to_string(), node_id.to_string()));
        Ok(())
    }

    fn pending(&self) -> io::Result<Vec<PipelineReport>> {
        Ok(self.reports.lock().unwrap().values().cloned().collect())
    }
}

/// Hooks for observing execution; the simulator uses them to keep per-node
/// event logs.
pub trait ExecutionObserver: Send + Sync {
    fn task_started(&self, experiment_id: &str, stage: usize, index: usize, task_name: &str);
    fn task_note(&self, _experiment_id: &str, _stage: usize, _index: usize, _note: &str) {}
    fn report_attempt(&self, _experiment_id: &str, _attempt: u32, _delivered: bool) {}
}

/// A running packet capture registered by a capture task.
pub struct CaptureHandle {
    pub out_path: String,
    pub iface: String,
    pub process: Option<tokio::process::Child>,
}

/// Shared state visible to every task of one executor run.
pub struct TaskContext {
    pub experiment_id: String,
    pub node_id: String,
    pub node_kind: NodeKind,
    pub gateway: Arc<dyn GatewayApi>,
    pub scratch: Arc<dyn Scratch>,
    pub settings: ExecutorSettings,
    pub captures: tokio::sync::Mutex<HashMap<String, CaptureHandle>>,
    pub observer: Option<Arc<dyn ExecutionObserver>>,
}

impl TaskContext {
    pub fn new(
        experiment_id: impl Into<String>,
        node_id: impl Into<String>,
        node_kind: NodeKind,
        gateway: Arc<dyn GatewayApi>,
        scratch: Arc<dyn Scratch>,
    ) -> Self {
        Self {
            experiment_id: experiment_id.into(),
            node_id: node_id.into(),
            node_kind,
            gateway,
            scratch,
            settings: ExecutorSettings::default(),
            captures: tokio::sync::Mutex::new(HashMap::new()),
            observer: None,
        }
    }

    pub fn with_settings(mut self, settings: ExecutorSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn with_observer(mut self, observer: Arc<dyn ExecutionObserver>) -> Self {
        self.observer = Some(observer);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mem_scratch_rejects_escapes_and_removes_dirs() {
        let s = MemScratch::new();
        assert!(s.write("../x", b"a").is_err());
        assert!(s.write("/etc/passwd", b"a").is_err());
        s.write("./out/a.pcap", b"1").unwrap();
        s.write("out/b.pcap", b"22").unwrap();
        s.write("keep", b"").unwrap();
        assert_eq!(s.list(), ["keep", "out/a.pcap", "out/b.pcap"]);
        assert_eq!(s.size("out/b.pcap").unwrap(), 2);
        s.remove("out").unwrap();
        assert_eq!(s.list(), ["keep"]);
        s.clear().unwrap();
        assert!(s.list().is_empty());
    }

    #[test]
    fn dir_scratch_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = DirScratch::new(dir.path().join("scratch")).unwrap();
        s.write("a/b.txt", b"hello").unwrap();
        assert_eq!(s.read("a/b.txt").unwrap(), b"hello");
        assert_eq!(s.list(), ["a/b.txt"]);
        s.clear().unwrap();
        assert!(s.list().is_empty());
    }
}
