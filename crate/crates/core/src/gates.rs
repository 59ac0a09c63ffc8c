//! Quality gates G1 (III), G2 (VII) and G3 (X): checklist reviews with
//! evidence, documented approvals, and segregation of duties.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::audit::Verb;
use crate::canonical::{to_canonical, Digest};
use crate::cards::{required_cards, CardStatus};
use crate::error::{Error, Result};
use crate::ids::{AssetId, PrincipalId};
use crate::roles::{check_sod, ActionClass, RoleId};
use crate::stage::StageId;
use crate::state::{AssetState, Ctx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GateId {
    G1,
    G2,
    G3,
}

impl GateId {
    pub const ALL: [GateId; 3] = [GateId::G1, GateId::G2, GateId::G3];

    pub fn stage(self) -> StageId {
        match self {
            GateId::G1 => StageId::III,
            GateId::G2 => StageId::VII,
            GateId::G3 => StageId::X,
        }
    }

    pub fn at_stage(stage: StageId) -> Option<GateId> {
        GateId::ALL.into_iter().find(|g| g.stage() == stage)
    }

    pub fn purpose(self) -> &'static str {
        match self {
            GateId::G1 => "approval for development",
            GateId::G2 => "approval for release",
            GateId::G3 => "update gate",
        }
    }
}

impl fmt::Display for GateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for GateId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "G1" => Ok(GateId::G1),
            "G2" => Ok(GateId::G2),
            "G3" => Ok(GateId::G3),
            _ => Err(format!("unknown gate `{s}` (expected G1, G2 or G3)")),
        }
    }
}

/// A checklist item as configured for a gate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecklistTemplate {
    pub item_id: String,
    pub description: String,
    #[serde(default = "yes")]
    pub mandatory: bool,
    /// Marks items that encode CPPS-specific activities.
    #[serde(default)]
    pub cpps: bool,
}

fn yes() -> bool {
    true
}

fn tpl(item_id: &str, description: &str, cpps: bool) -> ChecklistTemplate {
    ChecklistTemplate {
        item_id: item_id.into(),
        description: description.into(),
        mandatory: true,
        cpps,
    }
}

/// Seed checklist for a gate.
pub fn default_checklist(gate: GateId) -> Vec<ChecklistTemplate> {
    match gate {
        GateId::G1 => vec![
            tpl("business_alignment", "Use case aligned with business goals", false),
            tpl("stakeholder_commitment", "Stakeholder commitment confirmed", false),
            tpl(
                "technical_feasibility",
                "Technical feasibility demonstrated by the prototype",
                false,
            ),
            tpl(
                "data_availability",
                "Data availability validated on the initial IIoT data setup",
                true,
            ),
            tpl(
                "cpps_boundaries",
                "CPPS boundaries validated (system boundaries and AI-asset interfaces)",
                true,
            ),
            tpl("use_case_card", "Use-case card approved", false),
        ],
        GateId::G2 => vec![
            tpl("dataset_model_cards", "Dataset and model cards approved", false),
            tpl(
                "reproducible_pipelines",
                "Reproducible data and model pipelines on real sensor and machine data",
                true,
            ),
            tpl("lab_tests", "Hybrid testing: lab test results", true),
            tpl("pilot_tests", "Hybrid testing: pilot (shop-floor) test results", true),
            tpl(
                "deployment_design",
                "Deployment design for edge/hybrid low-latency execution",
                true,
            ),
            tpl(
                "certification_plan",
                "Certification-relevant documentation planned",
                false,
            ),
        ],
        GateId::G3 => vec![
            tpl(
                "monitoring_evidence",
                "Monitoring evidence and user feedback reviewed",
                true,
            ),
            tpl(
                "retraining_evaluation",
                "Retrained model evaluated against quality and safety thresholds",
                false,
            ),
            tpl("card_revisions", "Model and deployment card revisions updated", false),
            tpl("rollback_plan", "Rollback plan verified", false),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CheckResult {
    Pending,
    Pass,
    Fail,
}

impl FromStr for CheckResult {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pass" => Ok(CheckResult::Pass),
            "fail" => Ok(CheckResult::Fail),
            _ => Err(format!("unknown check result `{s}` (pass|fail)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub item_id: String,
    pub description: String,
    pub mandatory: bool,
    pub cpps: bool,
    pub result: CheckResult,
    pub evidence_refs: Vec<String>,
    pub checked_by: Option<PrincipalId>,
    pub checked_at: Option<DateTime<Utc>>,
}

impl From<&ChecklistTemplate> for ChecklistItem {
    fn from(t: &ChecklistTemplate) -> Self {
        ChecklistItem {
            item_id: t.item_id.clone(),
            description: t.description.clone(),
            mandatory: t.mandatory,
            cpps: t.cpps,
            result: CheckResult::Pending,
            evidence_refs: Vec::new(),
            checked_by: None,
            checked_at: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateDecision {
    Open,
    Approved,
    Rejected,
    RequiresReapproval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Approve,
    Reject,
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "approve" | "approved" => Ok(Verdict::Approve),
            "reject" | "rejected" => Ok(Verdict::Reject),
            _ => Err(format!("unknown verdict `{s}` (approve|reject)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Approval {
    pub principal: PrincipalId,
    pub role: RoleId,
    pub verdict: Verdict,
    pub rationale: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateReview {
    pub review_id: String,
    pub asset_id: AssetId,
    pub gate: GateId,
    /// G1/G2: review count for the gate. G3: the update cycle under review.
    pub cycle: u32,
    pub items: Vec<ChecklistItem>,
    pub decision: GateDecision,
    pub approvals: Vec<Approval>,
    pub opened_by: PrincipalId,
    pub opened_at: DateTime<Utc>,
    pub opened_in_event: u64,
    pub decided_at: Option<DateTime<Utc>>,
    /// Set once an advance has consumed this approval.
    pub passage_used: bool,
}

impl GateReview {
    pub fn artifact_id(&self) -> String {
        format!("review/{}", self.review_id)
    }

    pub fn unpassed_mandatory(&self) -> Vec<String> {
        self.items
            .iter()
            .filter(|i| i.mandatory && i.result != CheckResult::Pass)
            .map(|i| i.item_id.clone())
            .collect()
    }
}

/// Splits `<asset>:<gate>:<n>` review ids.
pub fn review_asset(review_id: &str) -> Option<AssetId> {
    let mut parts = review_id.rsplitn(3, ':');
    let _n = parts.next()?.parse::<u32>().ok()?;
    let _g: GateId = parts.next()?.parse().ok()?;
    Some(AssetId::from(parts.next()?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvidenceSource {
    Inline { size: usize },
    External { reference: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub evidence_id: String,
    pub asset_id: AssetId,
    pub description: String,
    pub source: EvidenceSource,
    pub digest: Digest,
    pub attached_by: PrincipalId,
    pub attached_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub pending: usize,
    pub mandatory_unpassed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum GateStatus {
    NeverOpened {
        gate: GateId,
    },
    Reviewed {
        gate: GateId,
        review_id: String,
        decision: GateDecision,
        cycle: u32,
        items: ItemSummary,
        passage_used: bool,
    },
}

impl AssetState {
    pub fn review(&self, review_id: &str) -> Result<&GateReview> {
        self.reviews
            .iter()
            .find(|r| r.review_id == review_id)
            .ok_or_else(|| Error::UnknownReview(review_id.to_string()))
    }

    fn review_index(&self, review_id: &str) -> Result<usize> {
        self.reviews
            .iter()
            .position(|r| r.review_id == review_id)
            .ok_or_else(|| Error::UnknownReview(review_id.to_string()))
    }

    /// Stores evidence content-addressed; attaching identical bytes again
    /// returns the existing record without a new event.
    pub fn attach_evidence(
        &mut self,
        cx: &Ctx,
        actor: &PrincipalId,
        description: &str,
        payload: Option<Vec<u8>>,
        external_ref: Option<&str>,
    ) -> Result<Evidence> {
        self.require_active()?;
        self.require_responsible(cx, Some(actor))?;
        let (bytes, source) = match (payload, external_ref) {
            (Some(b), None) => {
                let size = b.len();
                (b, EvidenceSource::Inline { size })
            }
            (None, Some(r)) if !r.trim().is_empty() => (
                r.as_bytes().to_vec(),
                EvidenceSource::External {
                    reference: r.to_string(),
                },
            ),
            _ => {
                return Err(Error::InvalidSection {
                    section: "evidence".into(),
                    reason: "exactly one of payload or external reference is required".into(),
                })
            }
        };
        let digest = Digest::of(&bytes);
        let evidence_id = format!("sha256:{digest}");
        if let Some(e) = self.evidence.get(&evidence_id) {
            return Ok(e.clone());
        }
        let seq = self.next_seq();
        self.artifacts.put(&format!("evidence/{digest}"), bytes, cx.now, seq);
        let ev = Evidence {
            evidence_id: evidence_id.clone(),
            asset_id: self.asset.asset_id.clone(),
            description: description.to_string(),
            source,
            digest,
            attached_by: actor.clone(),
            attached_at: cx.now,
        };
        self.evidence.insert(evidence_id.clone(), ev.clone());
        self.record(cx, actor, Verb::AttachEvidence, evidence_id, &ev)?;
        Ok(ev)
    }

    pub(crate) fn precheck_open_gate_review(&self, cx: &Ctx, gate: GateId, actor: Option<&PrincipalId>) -> Result<()> {
        self.require_active()?;
        let current = self.asset.current_stage;
        if current != gate.stage() {
            return Err(Error::WrongStage {
                gate,
                expected: gate.stage(),
                current,
            });
        }
        if self
            .reviews
            .iter()
            .any(|r| r.gate == gate && r.decision == GateDecision::Open)
        {
            return Err(Error::ReviewAlreadyOpen(gate));
        }
        self.require_work_permission(cx, actor, format!("open a {gate} review"))
    }

    fn require_work_permission(&self, cx: &Ctx, actor: Option<&PrincipalId>, action: String) -> Result<()> {
        match actor {
            Some(a) if !self.is_permitted(cx, a, ActionClass::Work, self.asset.current_stage) => {
                Err(Error::NotPermitted {
                    actor: a.clone(),
                    action,
                })
            }
            _ => Ok(()),
        }
    }

    pub fn open_gate_review(&mut self, cx: &Ctx, gate: GateId, actor: &PrincipalId) -> Result<GateReview> {
        self.precheck_open_gate_review(cx, gate, Some(actor))?;
        let seq_for_gate = self.reviews.iter().filter(|r| r.gate == gate).count() as u32 + 1;
        let cycle = match gate {
            GateId::G3 => self.asset.update_cycle + 1,
            _ => seq_for_gate,
        };
        let review = GateReview {
            review_id: format!("{}:{gate}:{seq_for_gate}", self.asset.asset_id),
            asset_id: self.asset.asset_id.clone(),
            gate,
            cycle,
            items: cx.config.checklist(gate).iter().map(ChecklistItem::from).collect(),
            decision: GateDecision::Open,
            approvals: Vec::new(),
            opened_by: actor.clone(),
            opened_at: cx.now,
            opened_in_event: self.next_seq(),
            decided_at: None,
            passage_used: false,
        };
        self.reviews.push(review.clone());
        self.snapshot_review(cx, self.reviews.len() - 1);
        self.record(cx, actor, Verb::OpenGateReview, review.review_id.clone(), &review)?;
        Ok(review)
    }

    /// Reviews are versioned when opened and on every decision; individual
    /// checks live in the ledger.
    fn snapshot_review(&mut self, cx: &Ctx, idx: usize) {
        let seq = self.next_seq();
        let r = &self.reviews[idx];
        let id = r.artifact_id();
        let bytes = to_canonical(r);
        self.artifacts.put(&id, bytes, cx.now, seq);
    }

    pub(crate) fn precheck_record_check(
        &self,
        cx: &Ctx,
        review_id: &str,
        actor: Option<&PrincipalId>,
    ) -> Result<usize> {
        self.require_active()?;
        let idx = self.review_index(review_id)?;
        let r = &self.reviews[idx];
        if r.decision != GateDecision::Open {
            return Err(Error::ReviewNotOpen(review_id.to_string()));
        }
        let current = self.asset.current_stage;
        if current != r.gate.stage() {
            return Err(Error::WrongStage {
                gate: r.gate,
                expected: r.gate.stage(),
                current,
            });
        }
        self.require_work_permission(cx, actor, format!("record checks on {}", r.gate))?;
        Ok(idx)
    }

    pub fn record_check(
        &mut self,
        cx: &Ctx,
        review_id: &str,
        item_id: &str,
        result: CheckResult,
        evidence_refs: &[String],
        actor: &PrincipalId,
    ) -> Result<ChecklistItem> {
        let idx = self.precheck_record_check(cx, review_id, Some(actor))?;
        let item_idx = self.reviews[idx]
            .items
            .iter()
            .position(|i| i.item_id == item_id)
            .ok_or_else(|| Error::UnknownItem(item_id.to_string()))?;
        if result == CheckResult::Pending {
            return Err(Error::InvalidSection {
                section: "result".into(),
                reason: "a recorded check is Pass or Fail".into(),
            });
        }
        if let Some(missing) = evidence_refs.iter().find(|e| !self.evidence.contains_key(*e)) {
            return Err(Error::MissingEvidence(missing.clone()));
        }
        let item = &mut self.reviews[idx].items[item_idx];
        item.result = result;
        item.evidence_refs = evidence_refs.to_vec();
        item.checked_by = Some(actor.clone());
        item.checked_at = Some(cx.now);
        let item = item.clone();
        self.record(
            cx,
            actor,
            Verb::RecordCheck,
            format!("{review_id}/{item_id}"),
            &serde_json::json!({ "review_id": review_id, "item": item }),
        )?;
        Ok(item)
    }

    /// Principals whose work a decision on this review would be approving:
    /// authors of the effective and pending revisions of the cards required
    /// at the gate, everyone who recorded a check, and every actor of stage
    /// work since the review opened.
    pub fn review_scope(&self, review: &GateReview) -> BTreeSet<PrincipalId> {
        let mut scope = BTreeSet::new();
        for kind in required_cards(review.gate.stage()) {
            let hist = self.card_history(kind);
            let from = hist.iter().rposition(|c| c.status == CardStatus::Approved).unwrap_or(0);
            scope.extend(hist[from..].iter().map(|c| c.author.clone()));
        }
        scope.extend(review.items.iter().filter_map(|i| i.checked_by.clone()));
        scope.extend(
            self.ledger
                .events()
                .iter()
                .filter(|e| e.seq >= review.opened_in_event && e.action.verb.is_work())
                .map(|e| e.actor.clone()),
        );
        scope
    }

    pub(crate) fn precheck_decide_gate(
        &self,
        cx: &Ctx,
        review_id: &str,
        approver: Option<&PrincipalId>,
        verdict: Verdict,
    ) -> Result<usize> {
        self.require_active()?;
        let idx = self.review_index(review_id)?;
        let r = &self.reviews[idx];
        if r.decision != GateDecision::Open {
            return Err(Error::ReviewNotOpen(review_id.to_string()));
        }
        let current = self.asset.current_stage;
        if current != r.gate.stage() {
            return Err(Error::WrongStage {
                gate: r.gate,
                expected: r.gate.stage(),
                current,
            });
        }
        if let Some(a) = approver {
            if verdict == Verdict::Approve {
                check_sod(&self.review_scope(r), a)?;
            }
            self.require_accountable(cx, Some(a))?;
            if r.approvals.iter().any(|ap| &ap.principal == a) {
                return Err(Error::DuplicateApproval(a.clone()));
            }
        }
        if verdict == Verdict::Approve {
            let unpassed = r.unpassed_mandatory();
            if !unpassed.is_empty() {
                return Err(Error::MandatoryItemNotPassed(unpassed));
            }
        }
        Ok(idx)
    }

    /// Records a verdict. A rejection closes the review; approvals close it
    /// once the configured quorum of distinct accountable approvers is met.
    pub fn decide_gate(
        &mut self,
        cx: &Ctx,
        review_id: &str,
        approver: &PrincipalId,
        verdict: Verdict,
        rationale: &str,
    ) -> Result<GateReview> {
        let idx = self.precheck_decide_gate(cx, review_id, Some(approver), verdict)?;
        if rationale.trim().is_empty() {
            return Err(Error::EmptyRationale);
        }
        let stage = self.asset.current_stage;
        let role = cx
            .config
            .matrix
            .stage(stage)
            .and_then(|r| r.accountable.clone())
            .expect("validated matrix has an accountable role per stage");
        let quorum = cx.config.gates.quorum.max(1) as usize;
        let r = &mut self.reviews[idx];
        r.approvals.push(Approval {
            principal: approver.clone(),
            role,
            verdict,
            rationale: rationale.to_string(),
            timestamp: cx.now,
        });
        match verdict {
            Verdict::Reject => {
                r.decision = GateDecision::Rejected;
                r.decided_at = Some(cx.now);
            }
            Verdict::Approve => {
                let approvals = r.approvals.iter().filter(|a| a.verdict == Verdict::Approve).count();
                if approvals >= quorum {
                    r.decision = GateDecision::Approved;
                    r.decided_at = Some(cx.now);
                }
            }
        }
        let review = r.clone();
        self.snapshot_review(cx, idx);
        self.record(
            cx,
            approver,
            Verb::DecideGate,
            format!("{review_id} {verdict:?}"),
            &serde_json::json!({
                "review_id": review_id,
                "verdict": verdict,
                "rationale": rationale,
                "decision": review.decision,
                "cycle": review.cycle,
            }),
        )?;
        Ok(review)
    }

    pub fn gate_status(&self, gate: GateId) -> GateStatus {
        match self.latest_review(gate) {
            None => GateStatus::NeverOpened { gate },
            Some(r) => {
                let count = |res| r.items.iter().filter(|i| i.result == res).count();
                GateStatus::Reviewed {
                    gate,
                    review_id: r.review_id.clone(),
                    decision: r.decision,
                    cycle: r.cycle,
                    items: ItemSummary {
                        total: r.items.len(),
                        passed: count(CheckResult::Pass),
                        failed: count(CheckResult::Fail),
                        pending: count(CheckResult::Pending),
                        mandatory_unpassed: r.unpassed_mandatory(),
                    },
                    passage_used: r.passage_used,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::*;

    #[test]
    fn gate_stage_mapping() {
        assert_eq!(GateId::G1.stage(), StageId::III);
        assert_eq!(GateId::G2.stage(), StageId::VII);
        assert_eq!(GateId::G3.stage(), StageId::X);
        assert_eq!(GateId::at_stage(StageId::IV), None);
    }

    #[test]
    fn default_checklists_carry_seed_items() {
        let g1 = default_checklist(GateId::G1);
        assert!(g1.iter().any(|i| i.description.contains("CPPS boundaries validated")));
        let g2 = default_checklist(GateId::G2);
        assert!(g2.iter().any(|i| i.item_id == "lab_tests"));
        assert!(g2.iter().any(|i| i.item_id == "pilot_tests"));
        let g3 = default_checklist(GateId::G3);
        assert!(g3.iter().any(|i| i.item_id == "monitoring_evidence"));
        for g in GateId::ALL {
            assert!(default_checklist(g).iter().any(|i| i.mandatory));
        }
    }

    #[test]
    fn review_id_parsing() {
        assert_eq!(review_asset("plant-7:G2:3"), Some(AssetId::from("plant-7")));
        assert_eq!(review_asset("a:b:G1:1"), Some(AssetId::from("a:b")));
        assert_eq!(review_asset("nonsense"), None);
    }

    #[test]
    fn open_paths() {
        let f = TestConfig::new();
        let cx = f.ctx();
        let mut st = f.asset_at(StageId::VII);
        let r = st.open_gate_review(&cx, GateId::G2, &p(WORKER)).unwrap();
        assert!(r.items.iter().any(|i| i.item_id == "pilot_tests"));
        assert_eq!(
            st.open_gate_review(&cx, GateId::G2, &p(WORKER)).unwrap_err(),
            Error::ReviewAlreadyOpen(GateId::G2)
        );
        let st5 = f.asset_at(StageId::V);
        let mut st5b = st5.clone();
        assert_eq!(
            st5b.open_gate_review(&cx, GateId::G2, &p(WORKER)).unwrap_err().code(),
            "WrongStage"
        );
    }

    #[test]
    fn record_check_paths() {
        let f = TestConfig::new();
        let cx = f.ctx();
        let mut st = f.asset_at(StageId::III);
        let r = st.open_gate_review(&cx, GateId::G1, &p(WORKER)).unwrap();
        let ev = st
            .attach_evidence(&cx, &p(WORKER), "dataset probe", Some(b"probe results".to_vec()), None)
            .unwrap();
        let item = st
            .record_check(
                &cx,
                &r.review_id,
                "data_availability",
                CheckResult::Pass,
                std::slice::from_ref(&ev.evidence_id),
                &p(WORKER),
            )
            .unwrap();
        assert_eq!(item.checked_by, Some(p(WORKER)));
        assert_eq!(
            st.record_check(
                &cx,
                &r.review_id,
                "data_availability",
                CheckResult::Pass,
                &["sha256:dead".into()],
                &p(WORKER)
            )
            .unwrap_err(),
            Error::MissingEvidence("sha256:dead".into())
        );
        assert_eq!(
            st.record_check(&cx, &r.review_id, "nope", CheckResult::Pass, &[], &p(WORKER))
                .unwrap_err()
                .code(),
            "UnknownItem"
        );
        f.pass_and_approve(&mut st, &r.review_id);
        assert_eq!(
            st.record_check(
                &cx,
                &r.review_id,
                "data_availability",
                CheckResult::Fail,
                &[],
                &p(WORKER)
            )
            .unwrap_err()
            .code(),
            "ReviewNotOpen"
        );
    }

    #[test]
    fn evidence_idempotent_by_digest() {
        let f = TestConfig::new();
        let cx = f.ctx();
        let mut st = f.asset_at(StageId::III);
        let a = st
            .attach_evidence(&cx, &p(WORKER), "x", Some(b"same".to_vec()), None)
            .unwrap();
        let n = st.ledger.len();
        let b = st
            .attach_evidence(&cx, &p(WORKER), "y", Some(b"same".to_vec()), None)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(st.ledger.len(), n);
    }

    #[test]
    fn decide_paths() {
        let f = TestConfig::new();
        let cx = f.ctx();
        let mut st = f.asset_at(StageId::III);
        let r = st.open_gate_review(&cx, GateId::G1, &p(WORKER)).unwrap();
        // one mandatory item pending
        for item in r.items.iter().skip(1) {
            st.record_check(&cx, &r.review_id, &item.item_id, CheckResult::Pass, &[], &p(WORKER))
                .unwrap();
        }
        assert_eq!(
            st.decide_gate(&cx, &r.review_id, &p(APPROVER), Verdict::Approve, "ok")
                .unwrap_err(),
            Error::MandatoryItemNotPassed(vec![r.items[0].item_id.clone()])
        );
        st.record_check(
            &cx,
            &r.review_id,
            &r.items[0].item_id,
            CheckResult::Pass,
            &[],
            &p(WORKER),
        )
        .unwrap();
        assert_eq!(
            st.decide_gate(&cx, &r.review_id, &p(APPROVER), Verdict::Approve, " ")
                .unwrap_err(),
            Error::EmptyRationale
        );
        // a checker cannot approve
        assert_eq!(
            st.decide_gate(&cx, &r.review_id, &p(WORKER), Verdict::Approve, "ok")
                .unwrap_err()
                .code(),
            "SoDViolation"
        );
        assert_eq!(
            st.decide_gate(&cx, &r.review_id, &p(OUTSIDER), Verdict::Approve, "ok")
                .unwrap_err()
                .code(),
            "NotAccountable"
        );
        let done = st
            .decide_gate(&cx, &r.review_id, &p(APPROVER), Verdict::Approve, "ready")
            .unwrap();
        assert_eq!(done.decision, GateDecision::Approved);
        assert!(done.approvals.iter().all(|a| !a.rationale.is_empty()));
        assert_eq!(st.advance(&cx, &p(WORKER)).unwrap().to_stage, StageId::IV);
    }

    #[test]
    fn rejection_then_new_cycle() {
        let f = TestConfig::new();
        let cx = f.ctx();
        let mut st = f.asset_at(StageId::III);
        let r = st.open_gate_review(&cx, GateId::G1, &p(WORKER)).unwrap();
        st.decide_gate(&cx, &r.review_id, &p(APPROVER), Verdict::Reject, "not feasible yet")
            .unwrap();
        assert_eq!(st.advance(&cx, &p(WORKER)).unwrap_err().code(), "GateNotApproved");
        let r2 = st.open_gate_review(&cx, GateId::G1, &p(WORKER)).unwrap();
        assert_eq!(r2.cycle, 2);
    }

    #[test]
    fn gate_status_reports() {
        let f = TestConfig::new();
        let cx = f.ctx();
        let st = f.asset_with_team();
        assert_eq!(st.gate_status(GateId::G2), GateStatus::NeverOpened { gate: GateId::G2 });
        let mut st = f.asset_at(StageId::V);
        st.feedback(&cx, StageId::II, &p(WORKER), "data gap").unwrap();
        match st.gate_status(GateId::G1) {
            GateStatus::Reviewed { decision, .. } => assert_eq!(decision, GateDecision::RequiresReapproval),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn g3_cycles_follow_update_cycles() {
        let f = TestConfig::new();
        let cx = f.ctx();
        let mut st = f.asset_at(StageId::X);
        for expected_cycle in 1..=2u32 {
            let r = st.open_gate_review(&cx, GateId::G3, &p(WORKER)).unwrap();
            assert_eq!(r.cycle, expected_cycle);
            f.pass_and_approve(&mut st, &r.review_id);
            st.advance(&cx, &p(WORKER)).unwrap();
            assert_eq!(st.asset.update_cycle, expected_cycle);
            assert_eq!(st.asset.current_stage, StageId::VIII);
            st.advance(&cx, &p(WORKER)).unwrap();
            st.advance(&cx, &p(WORKER)).unwrap();
        }
        match st.gate_status(GateId::G3) {
            GateStatus::Reviewed { decision, cycle, .. } => {
                assert_eq!((decision, cycle), (GateDecision::Approved, 2))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quorum_of_two() {
        let mut f = TestConfig::new();
        f.config.gates.quorum = 2;
        let cx = f.ctx();
        let mut st = f.asset_at(StageId::III);
        st.bind_role(&cx, &p(APPROVER2), crate::roles::PRODUCT_MANAGER, &p(OWNER))
            .unwrap();
        let r = st.open_gate_review(&cx, GateId::G1, &p(WORKER)).unwrap();
        for item in &r.items {
            st.record_check(&cx, &r.review_id, &item.item_id, CheckResult::Pass, &[], &p(WORKER))
                .unwrap();
        }
        let once = st
            .decide_gate(&cx, &r.review_id, &p(APPROVER), Verdict::Approve, "ok")
            .unwrap();
        assert_eq!(once.decision, GateDecision::Open);
        assert_eq!(
            st.decide_gate(&cx, &r.review_id, &p(APPROVER), Verdict::Approve, "again")
                .unwrap_err()
                .code(),
            "DuplicateApproval"
        );
        let twice = st
            .decide_gate(&cx, &r.review_id, &p(APPROVER2), Verdict::Approve, "ok")
            .unwrap();
        assert_eq!(twice.decision, GateDecision::Approved);
    }
}
