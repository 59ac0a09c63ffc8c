//! Thread-safe engine over all assets.
//!
//! Each asset sits behind its own mutex, so operations on different assets
//! never wait for each other. A mutation runs against a copy of the asset,
//! the copy is persisted, and only then replaces the live state; a failed
//! operation or a failed write leaves nothing behind.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};

use crate::audit::{export_ndjson, ArtifactRevision, ArtifactStore, ChainStatus};
use crate::canonical::to_canonical;
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::ids::{AssetId, PrincipalId};
use crate::lifecycle::Asset;
use crate::operation::{IngestOutcome, MetricPoint};
use crate::state::{AssetState, Ctx};
use crate::store::Store;

pub const CONFIG_ARTIFACT: &str = "config";

type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;
type Slot = Arc<Mutex<AssetState>>;

pub struct Engine {
    config: RwLock<Arc<EngineConfig>>,
    assets: RwLock<HashMap<AssetId, Slot>>,
    system: Mutex<ArtifactStore>,
    store: Arc<dyn Store>,
    clock: Clock,
}

impl Engine {
    /// Validates the configuration, loads persisted assets and stores a
    /// snapshot of the configuration if it changed since the last start.
    pub fn open(config: EngineConfig, store: Arc<dyn Store>) -> Result<Engine> {
        Self::with_clock(config, store, Arc::new(Utc::now))
    }

    pub fn with_clock(config: EngineConfig, store: Arc<dyn Store>, clock: Clock) -> Result<Engine> {
        config.validate()?;
        let assets = store
            .load_assets()?
            .into_iter()
            .map(|st| (st.asset.asset_id.clone(), Arc::new(Mutex::new(st))))
            .collect();
        let engine = Engine {
            config: RwLock::new(Arc::new(config)),
            assets: RwLock::new(assets),
            system: Mutex::new(store.load_system()?),
            store,
            clock,
        };
        let cfg = engine.config();
        engine.snapshot_config(&cfg)?;
        Ok(engine)
    }

    pub fn config(&self) -> Arc<EngineConfig> {
        self.config.read().expect("config lock").clone()
    }

    pub fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    /// Swaps in a new configuration after validating and snapshotting it.
    /// Operations already running finish under the old one.
    pub fn reload_config(&self, config: EngineConfig) -> Result<ArtifactRevision> {
        config.validate()?;
        let snap = self.snapshot_config(&config)?;
        *self.config.write().expect("config lock") = Arc::new(config);
        Ok(snap)
    }

    fn snapshot_config(&self, config: &EngineConfig) -> Result<ArtifactRevision> {
        let bytes = to_canonical(config);
        let mut sys = self.system.lock().expect("system lock");
        if let Some(latest) = sys.latest(CONFIG_ARTIFACT) {
            if latest.content_hash == crate::canonical::Digest::of(&bytes) {
                return Ok(latest.clone());
            }
        }
        let mut next = sys.clone();
        let rev = next.put(CONFIG_ARTIFACT, bytes, self.now(), 0);
        self.store.save_system(&next)?;
        *sys = next;
        Ok(rev)
    }

    /// Engine-wide artifacts (configuration snapshots).
    pub fn system_artifacts(&self) -> ArtifactStore {
        self.system.lock().expect("system lock").clone()
    }

    fn slot(&self, id: &AssetId) -> Result<Slot> {
        self.assets
            .read()
            .expect("asset map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::UnknownAsset(id.clone()))
    }

    pub fn create_asset(&self, asset_id: AssetId, name: &str, description: &str, owner: &PrincipalId) -> Result<Asset> {
        let config = self.config();
        let cx = Ctx::new(&config, self.now());
        let mut map = self.assets.write().expect("asset map lock");
        if map.contains_key(&asset_id) {
            return Err(Error::DuplicateId(asset_id));
        }
        let st = AssetState::create(&cx, asset_id.clone(), name, description, owner)?;
        self.store.save_asset(&st)?;
        let asset = st.asset.clone();
        map.insert(asset_id, Arc::new(Mutex::new(st)));
        Ok(asset)
    }

    pub fn list_assets(&self) -> Vec<Asset> {
        let slots: Vec<Slot> = self.assets.read().expect("asset map lock").values().cloned().collect();
        let mut out: Vec<Asset> = slots
            .iter()
            .map(|s| s.lock().expect("asset lock").asset.clone())
            .collect();
        out.sort_by(|a, b| a.asset_id.cmp(&b.asset_id));
        out
    }

    pub fn asset_ids(&self) -> Vec<AssetId> {
        let mut ids: Vec<AssetId> = self.assets.read().expect("asset map lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Runs `f` against a consistent snapshot of one asset.
    pub fn read<T>(&self, id: &AssetId, f: impl FnOnce(&AssetState, &Ctx) -> T) -> Result<T> {
        let slot = self.slot(id)?;
        let config = self.config();
        let cx = Ctx::new(&config, self.now());
        let st = slot.lock().expect("asset lock");
        Ok(f(&st, &cx))
    }

    /// Clone of the full aggregate.
    pub fn snapshot(&self, id: &AssetId) -> Result<AssetState> {
        self.read(id, |st, _| st.clone())
    }

    /// Applies `f` to a copy of the asset and commits the copy only if `f`
    /// succeeds and the copy is persisted.
    pub fn mutate<T>(&self, id: &AssetId, f: impl FnOnce(&mut AssetState, &Ctx) -> Result<T>) -> Result<T> {
        let slot = self.slot(id)?;
        let config = self.config();
        let cx = Ctx::new(&config, self.now());
        let mut live = slot.lock().expect("asset lock");
        let mut work = live.clone();
        let out = f(&mut work, &cx)?;
        if work != *live {
            self.store.save_asset(&work)?;
            *live = work;
        }
        Ok(out)
    }

    /// Ingests a batch that may span assets. Affected assets are locked in
    /// id order; the batch is validated in full before anything is stored.
    pub fn ingest_metrics(&self, actor: &PrincipalId, points: &[MetricPoint]) -> Result<IngestOutcome> {
        let mut by_asset: BTreeMap<AssetId, Vec<MetricPoint>> = BTreeMap::new();
        for p in points {
            by_asset.entry(p.asset_id.clone()).or_default().push(p.clone());
        }
        let mut slots = Vec::new();
        for (id, pts) in &by_asset {
            let slot = self
                .slot(id)
                .map_err(|_| Error::UnknownDeployment(pts[0].deployment_id.clone()))?;
            slots.push(slot);
        }
        let config = self.config();
        let cx = Ctx::new(&config, self.now());
        let mut guards: Vec<_> = slots.iter().map(|s| s.lock().expect("asset lock")).collect();
        let mut staged = Vec::new();
        let mut total = IngestOutcome {
            accepted: 0,
            alerts: Vec::new(),
        };
        for (guard, pts) in guards.iter().zip(by_asset.values()) {
            let mut work = (**guard).clone();
            let out = work.ingest_metrics(&cx, actor, pts)?;
            total.accepted += out.accepted;
            total.alerts.extend(out.alerts);
            staged.push(work);
        }
        for (i, work) in staged.iter().enumerate() {
            if let Err(e) = self.store.save_asset(work) {
                for (g, _) in guards.iter().zip(0..i) {
                    let _ = self.store.save_asset(g);
                }
                return Err(e);
            }
        }
        for (guard, work) in guards.iter_mut().zip(staged) {
            **guard = work;
        }
        Ok(total)
    }

    pub fn verify_chain(&self, id: &AssetId) -> Result<ChainStatus> {
        self.read(id, |st, _| st.verify_chain())
    }

    pub fn export_audit(&self, id: &AssetId) -> Result<String> {
        self.read(id, |st, _| export_ndjson(st.ledger.events()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage::StageId;
    use crate::store::MemoryStore;
    use crate::testing::*;

    fn engine() -> (TestConfig, Arc<MemoryStore>, Engine) {
        let f = TestConfig::new();
        let store = Arc::new(MemoryStore::new());
        let now = f.now;
        let e = Engine::with_clock(f.config.clone(), store.clone(), Arc::new(move || now)).unwrap();
        (f, store, e)
    }

    #[test]
    fn create_list_duplicate() {
        let (_, _, e) = engine();
        assert!(e.list_assets().is_empty());
        e.create_asset("a".into(), "n", "d", &p(OWNER)).unwrap();
        assert_eq!(
            e.create_asset("a".into(), "n", "d", &p(OWNER)).unwrap_err(),
            Error::DuplicateId("a".into())
        );
        assert_eq!(e.list_assets().len(), 1);
        assert_eq!(e.snapshot(&"zz".into()).unwrap_err().code(), "UnknownAsset");
    }

    #[test]
    fn storage_failure_rolls_back() {
        let (_, store, e) = engine();
        let id = AssetId::from("a");
        e.create_asset(id.clone(), "n", "d", &p(OWNER)).unwrap();
        e.mutate(&id, |st, cx| st.bind_role(cx, &p(WORKER), "ProductManager", &p(OWNER)))
            .unwrap();
        let before = e.snapshot(&id).unwrap();
        store.set_failing(true);
        let err = e.mutate(&id, |st, cx| st.advance(cx, &p(WORKER))).unwrap_err();
        assert_eq!(err.code(), "StorageFailure");
        assert_eq!(e.snapshot(&id).unwrap(), before);
        store.set_failing(false);
        e.mutate(&id, |st, cx| st.advance(cx, &p(WORKER))).unwrap();
        let after = e.snapshot(&id).unwrap();
        // no gap in the sequence
        let seqs: Vec<u64> = after.ledger.events().iter().map(|ev| ev.seq).collect();
        assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>());
        assert_eq!(after.asset.current_stage, StageId::II);
    }

    #[test]
    fn reopen_restores_state_and_snapshots_config_once() {
        let f = TestConfig::new();
        let store = Arc::new(MemoryStore::new());
        {
            let e = Engine::open(f.config.clone(), store.clone()).unwrap();
            e.create_asset("a".into(), "n", "d", &p(OWNER)).unwrap();
        }
        let e = Engine::open(f.config.clone(), store.clone()).unwrap();
        assert_eq!(e.list_assets().len(), 1);
        assert_eq!(e.system_artifacts().revision_count(CONFIG_ARTIFACT), 1);
        let mut changed = f.config.clone();
        changed.gates.quorum = 2;
        e.reload_config(changed).unwrap();
        assert_eq!(e.system_artifacts().revision_count(CONFIG_ARTIFACT), 2);
        assert_eq!(e.config().gates.quorum, 2);
        let mut bad = f.config.clone();
        bad.gates.quorum = 0;
        assert_eq!(e.reload_config(bad).unwrap_err().code(), "InvalidConfig");
        assert_eq!(e.config().gates.quorum, 2);
    }

    #[test]
    fn invalid_config_rejected_at_open() {
        let mut f = TestConfig::new();
        f.config.matrix.0.get_mut(&StageId::VI).unwrap().accountable = None;
        let err = Engine::open(f.config, Arc::new(MemoryStore::new())).err().unwrap();
        assert_eq!(err, Error::InvalidConfig(vec!["VI: no accountable role".into()]));
    }

    #[test]
    fn failed_operation_leaves_no_event() {
        let (_, _, e) = engine();
        let id = AssetId::from("a");
        e.create_asset(id.clone(), "n", "d", &p(OWNER)).unwrap();
        let n = e.snapshot(&id).unwrap().ledger.len();
        assert!(e.mutate(&id, |st, cx| st.advance(cx, &p(OUTSIDER))).is_err());
        assert_eq!(e.snapshot(&id).unwrap().ledger.len(), n);
    }

    #[test]
    fn concurrent_assets_do_not_interfere() {
        let (_, _, e) = engine();
        let e = Arc::new(e);
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let e = e.clone();
                std::thread::spawn(move || {
                    let id = AssetId::from(format!("a{i}").as_str());
                    e.create_asset(id.clone(), "n", "d", &p(OWNER)).unwrap();
                    for r in ["ProductManager", "DataScientist", "DomainExpert"] {
                        e.mutate(&id, |st, cx| st.bind_role(cx, &p(WORKER), r, &p(OWNER)))
                            .unwrap();
                    }
                    e.mutate(&id, |st, cx| st.advance(cx, &p(WORKER))).unwrap();
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(e.list_assets().len(), 8);
        for id in e.asset_ids() {
            assert_eq!(e.verify_chain(&id).unwrap(), ChainStatus::Ok);
        }
    }
}
