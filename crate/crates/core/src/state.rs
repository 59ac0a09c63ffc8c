//! The per-asset aggregate. Every governed artifact of an asset lives in one
//! [`AssetState`], which is the unit of serialization, persistence, and
//! locking. Operations validate fully before mutating, so a failed call
//! leaves the state untouched.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::audit::{ArtifactStore, AuditEvent, Ledger, RetirementManifest, Verb};
use crate::cards::{AiCard, CardKind};
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::gates::{Evidence, GateReview};
use crate::ids::PrincipalId;
use crate::lifecycle::{Asset, AssetStatus, TransitionRecord};
use crate::operation::{Deployment, DriftAlert, MetricStream, UpdateProposal};
use crate::roles::RoleBinding;

/// Read-only context an operation runs against.
#[derive(Debug, Clone, Copy)]
pub struct Ctx<'a> {
    pub config: &'a EngineConfig,
    pub now: DateTime<Utc>,
}

impl<'a> Ctx<'a> {
    pub fn new(config: &'a EngineConfig, now: DateTime<Utc>) -> Self {
        Ctx { config, now }
    }

    pub fn require_principal(&self, p: &PrincipalId) -> Result<()> {
        match self.config.principal(p) {
            Some(pr) if pr.active => Ok(()),
            _ => Err(Error::UnknownPrincipal(p.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetState {
    pub asset: Asset,
    #[serde(default)]
    pub transitions: Vec<TransitionRecord>,
    #[serde(default)]
    pub bindings: Vec<RoleBinding>,
    /// Revision histories, oldest first.
    #[serde(default)]
    pub cards: BTreeMap<CardKind, Vec<AiCard>>,
    #[serde(default)]
    pub reviews: Vec<GateReview>,
    #[serde(default)]
    pub evidence: BTreeMap<String, Evidence>,
    #[serde(default)]
    pub deployments: Vec<Deployment>,
    #[serde(default)]
    pub streams: Vec<MetricStream>,
    #[serde(default)]
    pub alerts: Vec<DriftAlert>,
    #[serde(default)]
    pub proposals: Vec<UpdateProposal>,
    #[serde(default)]
    pub manifests: Vec<RetirementManifest>,
    pub ledger: Ledger,
    pub artifacts: ArtifactStore,
}

impl AssetState {
    pub(crate) fn empty(asset: Asset) -> Self {
        AssetState {
            asset,
            transitions: Vec::new(),
            bindings: Vec::new(),
            cards: BTreeMap::new(),
            reviews: Vec::new(),
            evidence: BTreeMap::new(),
            deployments: Vec::new(),
            streams: Vec::new(),
            alerts: Vec::new(),
            proposals: Vec::new(),
            manifests: Vec::new(),
            ledger: Ledger::default(),
            artifacts: ArtifactStore::default(),
        }
    }

    pub fn require_active(&self) -> Result<()> {
        match self.asset.status {
            AssetStatus::Active => Ok(()),
            _ => Err(Error::AssetRetired),
        }
    }

    pub(crate) fn require_not_retired(&self) -> Result<()> {
        match self.asset.status {
            AssetStatus::Retired => Err(Error::AssetRetired),
            _ => Ok(()),
        }
    }

    /// Appends the audit event for the mutation just applied.
    pub(crate) fn record<T: Serialize + ?Sized>(
        &mut self,
        cx: &Ctx,
        actor: &PrincipalId,
        verb: Verb,
        object: impl Into<String>,
        data: &T,
    ) -> Result<AuditEvent> {
        let asset_id = self.asset.asset_id.clone();
        Ok(self
            .ledger
            .append(&asset_id, actor, verb, object.into(), cx.now, data)
            .clone())
    }

    /// Sequence number the next audit event will receive.
    pub(crate) fn next_seq(&self) -> u64 {
        self.ledger.len() as u64 + 1
    }
}
