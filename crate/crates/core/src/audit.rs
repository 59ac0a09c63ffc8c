//! Hash-chained audit ledger, immutable artifact revision store, and
//! retirement manifests.
//!
//! Each asset owns one ledger. Event `n` carries
//! `hash_n = SHA-256(payload_n ‖ hash_{n-1})`, with an all-zero predecessor
//! for the first event, so editing any stored payload byte breaks the chain
//! at exactly that event.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::canonical::{from_canonical, to_canonical, to_canonical_string, Digest};
use crate::error::{Error, Result};
use crate::ids::{AssetId, PrincipalId};
use crate::lifecycle::AssetStatus;
use crate::state::{AssetState, Ctx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    CreateAsset,
    Advance,
    Feedback,
    InitiateRetirement,
    CompleteRetirement,
    BindRole,
    CreateCard,
    ReviseCard,
    ApproveCard,
    AttachEvidence,
    OpenGateReview,
    RecordCheck,
    DecideGate,
    IngestMetrics,
    EvaluateRules,
    OpenUpdateProposal,
    RegisterDeployment,
    TransitionDeployment,
    BuildRetirementManifest,
}

impl Verb {
    /// Stage work, as opposed to approvals, administration, and telemetry.
    /// Actors of work events fall inside a gate review's SoD scope.
    pub fn is_work(self) -> bool {
        matches!(
            self,
            Verb::Advance
                | Verb::Feedback
                | Verb::CreateCard
                | Verb::ReviseCard
                | Verb::AttachEvidence
                | Verb::OpenGateReview
                | Verb::RecordCheck
                | Verb::OpenUpdateProposal
                | Verb::RegisterDeployment
                | Verb::TransitionDeployment
        )
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("verb");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditAction {
    pub verb: Verb,
    pub object: String,
}

/// What is hashed: the header fields plus the operation's data, canonicalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EventBody {
    seq: u64,
    asset_id: AssetId,
    actor: PrincipalId,
    action: AuditAction,
    at: DateTime<Utc>,
    data: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub asset_id: AssetId,
    pub actor: PrincipalId,
    pub action: AuditAction,
    pub at: DateTime<Utc>,
    #[serde(with = "utf8_bytes")]
    pub payload: Vec<u8>,
    pub prev_hash: Digest,
    pub hash: Digest,
}

impl AuditEvent {
    /// The operation data carried in the payload.
    pub fn data(&self) -> Option<serde_json::Value> {
        let body: EventBody = from_canonical(&self.payload).ok()?;
        Some(body.data)
    }

    /// One line of the newline-delimited export.
    pub fn to_export_line(&self) -> String {
        to_canonical_string(self)
    }
}

mod utf8_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&String::from_utf8_lossy(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Ok(String::deserialize(d)?.into_bytes())
    }
}

pub(crate) mod b64_bytes {
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match b {
            Some(b) => s.serialize_some(&base64::engine::general_purpose::STANDARD.encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        match Option::<String>::deserialize(d)? {
            Some(s) => base64::engine::general_purpose::STANDARD
                .decode(s)
                .map(Some)
                .map_err(serde::de::Error::custom),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "seq")]
pub enum ChainStatus {
    Ok,
    /// First sequence number whose event does not verify.
    Broken(u64),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    events: Vec<AuditEvent>,
}

impl Ledger {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    /// Raw access for corruption drills and import checks. Never used by
    /// engine operations.
    pub fn events_mut_unchecked(&mut self) -> &mut Vec<AuditEvent> {
        &mut self.events
    }

    pub fn head(&self) -> Digest {
        self.events.last().map(|e| e.hash).unwrap_or(Digest::ZERO)
    }

    pub fn append<T: Serialize + ?Sized>(
        &mut self,
        asset_id: &AssetId,
        actor: &PrincipalId,
        verb: Verb,
        object: String,
        at: DateTime<Utc>,
        data: &T,
    ) -> &AuditEvent {
        let seq = self.events.len() as u64 + 1;
        let action = AuditAction { verb, object };
        let body = EventBody {
            seq,
            asset_id: asset_id.clone(),
            actor: actor.clone(),
            action: action.clone(),
            at,
            data: serde_json::to_value(data).expect("audit data serializes"),
        };
        let payload = to_canonical(&body);
        let prev_hash = self.head();
        let hash = Digest::chained(&payload, &prev_hash);
        self.events.push(AuditEvent {
            seq,
            asset_id: asset_id.clone(),
            actor: actor.clone(),
            action,
            at,
            payload,
            prev_hash,
            hash,
        });
        self.events.last().expect("just pushed")
    }

    pub fn verify(&self) -> ChainStatus {
        verify_events(&self.events)
    }
}

/// Recomputes the whole chain and reports the first event that fails any of:
/// sequence continuity, linkage to the previous hash, the digest itself, or
/// agreement between the event header and its hashed payload.
pub fn verify_events(events: &[AuditEvent]) -> ChainStatus {
    let mut prev = Digest::ZERO;
    for (i, e) in events.iter().enumerate() {
        let expected_seq = i as u64 + 1;
        let bad = e.seq != expected_seq
            || e.prev_hash != prev
            || Digest::chained(&e.payload, &e.prev_hash) != e.hash
            || !header_matches(e);
        if bad {
            return ChainStatus::Broken(expected_seq);
        }
        prev = e.hash;
    }
    ChainStatus::Ok
}

fn header_matches(e: &AuditEvent) -> bool {
    match from_canonical::<EventBody>(&e.payload) {
        Ok(b) => {
            b.seq == e.seq && b.asset_id == e.asset_id && b.actor == e.actor && b.action == e.action && b.at == e.at
        }
        Err(_) => false,
    }
}

/// Newline-delimited canonical export of a ledger.
pub fn export_ndjson(events: &[AuditEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_export_line());
        out.push('\n');
    }
    out
}

/// Parses an export and verifies it. Imported events are never appended
/// anywhere; a line that fails to parse counts as broken at its position.
pub fn verify_export(text: &str) -> ChainStatus {
    let mut events = Vec::new();
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        match serde_json::from_str::<AuditEvent>(line) {
            Ok(e) => events.push(e),
            Err(_) => {
                return match verify_events(&events) {
                    ChainStatus::Ok => ChainStatus::Broken(i as u64 + 1),
                    broken => broken,
                }
            }
        }
    }
    verify_events(&events)
}

/// Identifies one stored revision of one artifact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub artifact_id: String,
    pub revision: u32,
}

impl fmt::Display for ArtifactRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.artifact_id, self.revision)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRevision {
    pub artifact_id: String,
    pub revision: u32,
    pub content_hash: Digest,
    pub created_at: DateTime<Utc>,
    pub created_in_event: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredRevision {
    meta: ArtifactRevision,
    /// `None` once deleted under a retention decision; the digest stays.
    #[serde(with = "b64_bytes")]
    bytes: Option<Vec<u8>>,
}

/// Immutable, gapless revision store keyed by artifact id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactStore {
    artifacts: BTreeMap<String, Vec<StoredRevision>>,
}

impl ArtifactStore {
    /// Stores `bytes` as the next revision of `artifact_id`.
    pub fn put(
        &mut self,
        artifact_id: &str,
        bytes: Vec<u8>,
        created_at: DateTime<Utc>,
        created_in_event: u64,
    ) -> ArtifactRevision {
        let revs = self.artifacts.entry(artifact_id.to_string()).or_default();
        let meta = ArtifactRevision {
            artifact_id: artifact_id.to_string(),
            revision: revs.len() as u32 + 1,
            content_hash: Digest::of(&bytes),
            created_at,
            created_in_event,
        };
        revs.push(StoredRevision {
            meta: meta.clone(),
            bytes: Some(bytes),
        });
        meta
    }

    pub fn latest(&self, artifact_id: &str) -> Option<&ArtifactRevision> {
        self.artifacts.get(artifact_id)?.last().map(|r| &r.meta)
    }

    pub fn revision_count(&self, artifact_id: &str) -> u32 {
        self.artifacts.get(artifact_id).map_or(0, |v| v.len() as u32)
    }

    /// Bytes as stored, with the digest re-verified on read.
    pub fn get(&self, artifact_id: &str, revision: u32) -> Result<(Vec<u8>, ArtifactRevision)> {
        let missing = || Error::NoSuchRevision {
            artifact: artifact_id.to_string(),
            revision,
        };
        if revision == 0 {
            return Err(missing());
        }
        let stored = self
            .artifacts
            .get(artifact_id)
            .and_then(|v| v.get(revision as usize - 1))
            .ok_or_else(missing)?;
        let bytes = stored.bytes.as_ref().ok_or_else(|| Error::RevisionDeleted {
            artifact: artifact_id.to_string(),
            revision,
        })?;
        if Digest::of(bytes) != stored.meta.content_hash {
            return Err(Error::DigestMismatch {
                artifact: artifact_id.to_string(),
                revision,
            });
        }
        Ok((bytes.clone(), stored.meta.clone()))
    }

    pub fn all_revisions(&self) -> impl Iterator<Item = &ArtifactRevision> {
        self.artifacts.values().flat_map(|v| v.iter().map(|r| &r.meta))
    }

    pub fn refs(&self) -> BTreeSet<ArtifactRef> {
        self.all_revisions()
            .map(|m| ArtifactRef {
                artifact_id: m.artifact_id.clone(),
                revision: m.revision,
            })
            .collect()
    }

    pub fn artifact_ids(&self) -> impl Iterator<Item = &str> {
        self.artifacts.keys().map(String::as_str)
    }

    /// Drops the payload bytes of a revision, keeping its metadata and digest.
    pub(crate) fn tombstone(&mut self, r: &ArtifactRef) {
        if let Some(s) = self
            .artifacts
            .get_mut(&r.artifact_id)
            .and_then(|v| v.get_mut(r.revision as usize - 1))
        {
            s.bytes = None;
        }
    }

    /// Direct byte access for corruption drills in tests and tooling.
    pub fn bytes_mut_unchecked(&mut self, artifact_id: &str, revision: u32) -> Option<&mut Vec<u8>> {
        self.artifacts
            .get_mut(artifact_id)?
            .get_mut(revision.checked_sub(1)? as usize)?
            .bytes
            .as_mut()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RetentionAction {
    Retain,
    Archive,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionDecision {
    pub artifact_id: String,
    pub revision: u32,
    pub retention_action: RetentionAction,
    #[serde(default)]
    pub policy_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub artifact_id: String,
    pub revision: u32,
    pub content_hash: Digest,
    pub retention_action: RetentionAction,
    pub policy_ref: String,
}

impl ManifestEntry {
    pub fn artifact_ref(&self) -> ArtifactRef {
        ArtifactRef {
            artifact_id: self.artifact_id.clone(),
            revision: self.revision,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifestStatus {
    Draft,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetirementManifest {
    pub manifest_id: String,
    pub asset_id: AssetId,
    pub entries: Vec<ManifestEntry>,
    pub status: ManifestStatus,
    pub built_by: PrincipalId,
    pub built_at: DateTime<Utc>,
}

impl RetirementManifest {
    /// Stored revisions the manifest fails to cover, or covers with a
    /// mismatching digest or an empty policy reference.
    pub fn uncovered(&self, store: &ArtifactStore) -> Vec<ArtifactRef> {
        let mut covered: BTreeMap<ArtifactRef, &ManifestEntry> = BTreeMap::new();
        for e in &self.entries {
            covered.insert(e.artifact_ref(), e);
        }
        store
            .all_revisions()
            .filter(|m| {
                let r = ArtifactRef {
                    artifact_id: m.artifact_id.clone(),
                    revision: m.revision,
                };
                match covered.get(&r) {
                    Some(e) => e.content_hash != m.content_hash || e.policy_ref.trim().is_empty(),
                    None => true,
                }
            })
            .map(|m| ArtifactRef {
                artifact_id: m.artifact_id.clone(),
                revision: m.revision,
            })
            .collect()
    }
}

impl AssetState {
    pub fn verify_chain(&self) -> ChainStatus {
        self.ledger.verify()
    }

    pub fn get_revision(&self, artifact_id: &str, revision: u32) -> Result<(Vec<u8>, ArtifactRevision)> {
        self.artifacts.get(artifact_id, revision)
    }

    /// Enumerates every stored revision against the supplied decisions.
    /// Decisions must cover every revision; the manifest is Complete only if
    /// every entry also names a policy.
    pub fn build_retirement_manifest(
        &mut self,
        cx: &Ctx,
        actor: &PrincipalId,
        decisions: &[RetentionDecision],
    ) -> Result<RetirementManifest> {
        if self.asset.status != AssetStatus::RetirementPending {
            return Err(Error::WrongStatus {
                expected: "RetirementPending".into(),
                actual: self.asset.status.to_string(),
            });
        }
        let by_ref: BTreeMap<ArtifactRef, &RetentionDecision> = decisions
            .iter()
            .map(|d| {
                (
                    ArtifactRef {
                        artifact_id: d.artifact_id.clone(),
                        revision: d.revision,
                    },
                    d,
                )
            })
            .collect();
        let mut entries = Vec::new();
        let mut missing = Vec::new();
        for m in self.artifacts.all_revisions() {
            let r = ArtifactRef {
                artifact_id: m.artifact_id.clone(),
                revision: m.revision,
            };
            match by_ref.get(&r) {
                Some(d) => entries.push(ManifestEntry {
                    artifact_id: m.artifact_id.clone(),
                    revision: m.revision,
                    content_hash: m.content_hash,
                    retention_action: d.retention_action,
                    policy_ref: d.policy_ref.clone(),
                }),
                None => missing.push(r),
            }
        }
        if !missing.is_empty() {
            return Err(Error::IncompleteDecisions(missing));
        }
        let status = if entries.iter().all(|e| !e.policy_ref.trim().is_empty()) {
            ManifestStatus::Complete
        } else {
            ManifestStatus::Draft
        };
        let manifest = RetirementManifest {
            manifest_id: format!("{}:manifest:{}", self.asset.asset_id, self.manifests.len() + 1),
            asset_id: self.asset.asset_id.clone(),
            entries,
            status,
            built_by: actor.clone(),
            built_at: cx.now,
        };
        self.manifests.push(manifest.clone());
        self.record(
            cx,
            actor,
            Verb::BuildRetirementManifest,
            manifest.manifest_id.clone(),
            &manifest,
        )?;
        Ok(manifest)
    }

    pub fn manifest(&self, manifest_id: &str) -> Result<&RetirementManifest> {
        self.manifests
            .iter()
            .find(|m| m.manifest_id == manifest_id)
            .ok_or_else(|| Error::UnknownManifest(manifest_id.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ledger_with(n: usize) -> Ledger {
        let mut l = Ledger::default();
        let t = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
        for i in 0..n {
            l.append(
                &AssetId::from("a"),
                &PrincipalId::from("p"),
                Verb::RecordCheck,
                format!("item {i}"),
                t,
                &serde_json::json!({"i": i}),
            );
        }
        l
    }

    #[test]
    fn genesis_uses_zero_prev_hash() {
        let l = ledger_with(1);
        assert_eq!(l.events()[0].prev_hash, Digest::ZERO);
    }

    #[test]
    fn chain_matches_independent_recomputation() {
        use sha2::{Digest as _, Sha256};
        let l = ledger_with(5);
        let mut prev = [0u8; 32];
        for e in l.events() {
            let mut h = Sha256::new();
            h.update(&e.payload);
            h.update(prev);
            let d: [u8; 32] = h.finalize().into();
            assert_eq!(e.hash.0, d);
            prev = d;
        }
    }

    #[test]
    fn verify_cases() {
        assert_eq!(Ledger::default().verify(), ChainStatus::Ok);
        let mut l = ledger_with(100);
        assert_eq!(l.verify(), ChainStatus::Ok);
        l.events_mut_unchecked()[2].payload[10] ^= 0x01;
        assert_eq!(l.verify(), ChainStatus::Broken(3));
    }

    #[test]
    fn header_tamper_detected() {
        let mut l = ledger_with(4);
        l.events_mut_unchecked()[1].actor = PrincipalId::from("mallory");
        assert_eq!(l.verify(), ChainStatus::Broken(2));
    }

    #[test]
    fn export_verifies_and_detects_edits() {
        let l = ledger_with(6);
        let text = export_ndjson(l.events());
        assert_eq!(verify_export(&text), ChainStatus::Ok);
        let edited = text.replacen("item 3", "item 9", 2);
        assert_eq!(verify_export(&edited), ChainStatus::Broken(4));
    }

    #[test]
    fn revision_store_bounds_and_corruption() {
        let t = Utc::now();
        let mut s = ArtifactStore::default();
        s.put("card/Model", b"one".to_vec(), t, 1);
        s.put("card/Model", b"two".to_vec(), t, 2);
        assert_eq!(s.get("card/Model", 1).unwrap().0, b"one");
        assert_eq!(s.get("card/Model", 0).unwrap_err().code(), "NoSuchRevision");
        assert_eq!(s.get("card/Model", 3).unwrap_err().code(), "NoSuchRevision");
        let stored = s.get("card/Model", 2).unwrap().1.content_hash;
        s.bytes_mut_unchecked("card/Model", 2).unwrap()[0] = b'T';
        assert_ne!(Digest::of(b"Two"), stored);
        assert_eq!(s.get("card/Model", 2).unwrap_err().code(), "DigestMismatch");
    }
}
