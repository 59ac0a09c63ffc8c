//! Persistence of asset aggregates. Each asset is one document; a write
//! replaces it atomically or not at all.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::audit::ArtifactStore;
use crate::error::{Error, Result};
use crate::ids::AssetId;
use crate::state::AssetState;

pub trait Store: Send + Sync {
    fn load_assets(&self) -> Result<Vec<AssetState>>;
    fn save_asset(&self, state: &AssetState) -> Result<()>;
    /// Engine-wide artifacts such as configuration snapshots.
    fn load_system(&self) -> Result<ArtifactStore>;
    fn save_system(&self, store: &ArtifactStore) -> Result<()>;
}

fn encode<T: serde::Serialize>(v: &T) -> Result<Vec<u8>> {
    serde_json::to_vec(v).map_err(|e| Error::StorageFailure(e.to_string()))
}

fn decode<T: serde::de::DeserializeOwned>(what: &str, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::StorageFailure(format!("{what}: {e}")))
}

/// In-memory store holding serialized documents, with failure injection.
#[derive(Default)]
pub struct MemoryStore {
    assets: Mutex<BTreeMap<AssetId, Vec<u8>>>,
    system: Mutex<Option<Vec<u8>>>,
    fail_all: AtomicBool,
    fail_after: AtomicUsize,
    writes: AtomicUsize,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes every subsequent write fail until reset.
    pub fn set_failing(&self, failing: bool) {
        self.fail_all.store(failing, Ordering::SeqCst);
    }

    /// Lets `n` more writes succeed, then fails the rest. 0 disables.
    pub fn fail_after(&self, n: usize) {
        self.writes.store(0, Ordering::SeqCst);
        self.fail_after.store(n + 1, Ordering::SeqCst);
    }

    fn check_write(&self) -> Result<()> {
        let n = self.writes.fetch_add(1, Ordering::SeqCst) + 1;
        let limit = self.fail_after.load(Ordering::SeqCst);
        if self.fail_all.load(Ordering::SeqCst) || (limit > 0 && n >= limit) {
            return Err(Error::StorageFailure("injected write failure".into()));
        }
        Ok(())
    }
}

impl Store for MemoryStore {
    fn load_assets(&self) -> Result<Vec<AssetState>> {
        let map = self.assets.lock().expect("store lock");
        map.iter().map(|(id, b)| decode(id.as_str(), b)).collect()
    }

    fn save_asset(&self, state: &AssetState) -> Result<()> {
        self.check_write()?;
        let bytes = encode(state)?;
        self.assets
            .lock()
            .expect("store lock")
            .insert(state.asset.asset_id.clone(), bytes);
        Ok(())
    }

    fn load_system(&self) -> Result<ArtifactStore> {
        match &*self.system.lock().expect("store lock") {
            Some(b) => decode("system", b),
            None => Ok(ArtifactStore::default()),
        }
    }

    fn save_system(&self, store: &ArtifactStore) -> Result<()> {
        self.check_write()?;
        *self.system.lock().expect("store lock") = Some(encode(store)?);
        Ok(())
    }
}

/// One JSON document per asset under `<root>/assets`, written to a temporary
/// file and renamed into place.
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("assets"))
            .map_err(|e| Error::StorageFailure(format!("{}: {e}", root.display())))?;
        Ok(FileStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn asset_path(&self, id: &AssetId) -> PathBuf {
        self.root.join("assets").join(format!("{id}.json"))
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        let fail = |e: std::io::Error| Error::StorageFailure(format!("{}: {e}", path.display()));
        let tmp = path.with_extension("json.tmp");
        let mut f = fs::File::create(&tmp).map_err(fail)?;
        f.write_all(bytes).map_err(fail)?;
        f.sync_all().map_err(fail)?;
        fs::rename(&tmp, path).map_err(fail)
    }
}

impl Store for FileStore {
    fn load_assets(&self) -> Result<Vec<AssetState>> {
        let dir = self.root.join("assets");
        let entries = fs::read_dir(&dir).map_err(|e| Error::StorageFailure(format!("{}: {e}", dir.display())))?;
        let mut out = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::StorageFailure(e.to_string()))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let bytes = fs::read(&path).map_err(|e| Error::StorageFailure(format!("{}: {e}", path.display())))?;
                out.push(decode(&path.display().to_string(), &bytes)?);
            }
        }
        Ok(out)
    }

    fn save_asset(&self, state: &AssetState) -> Result<()> {
        self.write_atomic(&self.asset_path(&state.asset.asset_id), &encode(state)?)
    }

    fn load_system(&self) -> Result<ArtifactStore> {
        let path = self.root.join("system.json");
        match fs::read(&path) {
            Ok(b) => decode("system.json", &b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ArtifactStore::default()),
            Err(e) => Err(Error::StorageFailure(format!("{}: {e}", path.display()))),
        }
    }

    fn save_system(&self, store: &ArtifactStore) -> Result<()> {
        self.write_atomic(&self.root.join("system.json"), &encode(store)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::*;

    #[test]
    fn memory_round_trip_and_failure() {
        let f = TestConfig::new();
        let st = f.asset_with_team();
        let s = MemoryStore::new();
        s.save_asset(&st).unwrap();
        assert_eq!(s.load_assets().unwrap(), vec![st.clone()]);
        s.set_failing(true);
        assert_eq!(s.save_asset(&st).unwrap_err().code(), "StorageFailure");
        s.set_failing(false);
        s.fail_after(1);
        s.save_asset(&st).unwrap();
        assert!(s.save_asset(&st).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = TestConfig::new();
        let st = f.asset_at(crate::stage::StageId::V);
        let s = FileStore::open(dir.path()).unwrap();
        s.save_asset(&st).unwrap();
        let back = FileStore::open(dir.path()).unwrap().load_assets().unwrap();
        assert_eq!(back, vec![st.clone()]);
        assert_eq!(back[0].verify_chain(), crate::audit::ChainStatus::Ok);
        assert!(s.load_system().unwrap().refs().is_empty());
    }
}
