//! Asset state machine: creation, forward advancement through the gates,
//! feedback loops, and retirement.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::audit::{RetentionAction, Verb};
use crate::cards::required_cards;
use crate::error::{Error, Result};
use crate::gates::{GateDecision, GateId};
use crate::ids::{AssetId, PrincipalId};
use crate::stage::{phase_of, Phase, StageId};
use crate::state::{AssetState, Ctx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssetStatus {
    Active,
    RetirementPending,
    Retired,
}

impl fmt::Display for AssetStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Asset {
    pub asset_id: AssetId,
    pub name: String,
    pub description: String,
    pub owner: PrincipalId,
    pub current_stage: StageId,
    pub status: AssetStatus,
    pub created_at: DateTime<Utc>,
    /// Completed passes through the update gate.
    pub update_cycle: u32,
}

impl Asset {
    pub fn phase(&self) -> Phase {
        phase_of(self.current_stage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransitionKind {
    /// One stage forward.
    Advance,
    /// Leaving the update gate (X) after approval: the asset re-enters
    /// deployment (VIII) for the next operation cycle.
    Redeploy,
    /// Back to an earlier stage.
    Feedback,
    /// Into stage XI.
    Retire,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub asset_id: AssetId,
    pub from_stage: StageId,
    pub to_stage: StageId,
    pub kind: TransitionKind,
    pub actor: PrincipalId,
    pub reason: String,
    pub timestamp: DateTime<Utc>,
    /// Update cycle after the transition.
    pub update_cycle: u32,
}

impl AssetState {
    /// Builds a new asset at stage I and records its creation event.
    pub fn create(
        cx: &Ctx,
        asset_id: AssetId,
        name: &str,
        description: &str,
        owner: &PrincipalId,
    ) -> Result<AssetState> {
        if name.trim().is_empty() {
            return Err(Error::EmptyName);
        }
        cx.require_principal(owner)?;
        if !asset_id.is_well_formed() {
            return Err(Error::DuplicateId(asset_id));
        }
        let asset = Asset {
            asset_id,
            name: name.to_string(),
            description: description.to_string(),
            owner: owner.clone(),
            current_stage: StageId::I,
            status: AssetStatus::Active,
            created_at: cx.now,
            update_cycle: 0,
        };
        let mut st = AssetState::empty(asset.clone());
        st.record(cx, owner, Verb::CreateAsset, asset.name.clone(), &asset)?;
        Ok(st)
    }

    /// Latest review of `gate`, if any was ever opened.
    pub fn latest_review(&self, gate: GateId) -> Option<&crate::gates::GateReview> {
        self.reviews.iter().rev().find(|r| r.gate == gate)
    }

    /// Index of the review that authorizes leaving the current gate stage.
    fn passage_review(&self, gate: GateId) -> Option<usize> {
        let idx = self.reviews.iter().rposition(|r| r.gate == gate)?;
        let r = &self.reviews[idx];
        let cycle_ok = gate != GateId::G3 || r.cycle == self.asset.update_cycle + 1;
        (r.decision == GateDecision::Approved && !r.passage_used && cycle_ok).then_some(idx)
    }

    pub(crate) fn precheck_advance(&self, cx: &Ctx, actor: Option<&PrincipalId>) -> Result<()> {
        let stage = self.asset.current_stage;
        if stage == StageId::XI {
            return Err(Error::TerminalStage);
        }
        self.require_active()?;
        self.require_responsible(cx, actor)?;
        if let Some(gate) = GateId::at_stage(stage) {
            if self.passage_review(gate).is_none() {
                return Err(Error::GateNotApproved { gate });
            }
        }
        for kind in required_cards(stage) {
            if self.approved_card(kind).is_none() {
                return Err(Error::MissingOrUnapprovedCard(kind));
            }
        }
        Ok(())
    }

    /// Moves one stage forward. Leaving stage X completes an operation cycle
    /// and returns the asset to stage VIII.
    pub fn advance(&mut self, cx: &Ctx, actor: &PrincipalId) -> Result<TransitionRecord> {
        self.precheck_advance(cx, Some(actor))?;
        let from = self.asset.current_stage;
        if let Some(gate) = GateId::at_stage(from) {
            let idx = self.passage_review(gate).expect("checked in precheck");
            self.reviews[idx].passage_used = true;
        }
        let (to, kind, reason) = if from == StageId::X {
            self.asset.update_cycle += 1;
            (
                StageId::VIII,
                TransitionKind::Redeploy,
                format!("update cycle {} approved", self.asset.update_cycle),
            )
        } else {
            let to = from.next().expect("XI handled in precheck");
            (to, TransitionKind::Advance, String::new())
        };
        self.asset.current_stage = to;
        self.push_transition(cx, actor, from, to, kind, reason, Verb::Advance)
    }

    pub(crate) fn precheck_feedback(&self, cx: &Ctx, target: StageId, actor: Option<&PrincipalId>) -> Result<()> {
        self.require_active()?;
        let current = self.asset.current_stage;
        if target >= current {
            return Err(Error::NotEarlierStage { current, target });
        }
        self.require_responsible(cx, actor)
    }

    /// Returns to an earlier stage. Any gate in `[target, current)` whose
    /// latest review is Approved now requires re-approval.
    pub fn feedback(
        &mut self,
        cx: &Ctx,
        target: StageId,
        actor: &PrincipalId,
        reason: &str,
    ) -> Result<TransitionRecord> {
        self.precheck_feedback(cx, target, Some(actor))?;
        if reason.trim().is_empty() {
            return Err(Error::EmptyReason);
        }
        let from = self.asset.current_stage;
        let crossed: Vec<GateId> = StageId::range(target, from).filter_map(GateId::at_stage).collect();
        for gate in crossed {
            if let Some(idx) = self.reviews.iter().rposition(|r| r.gate == gate) {
                if self.reviews[idx].decision == GateDecision::Approved {
                    self.reviews[idx].decision = GateDecision::RequiresReapproval;
                }
            }
        }
        self.asset.current_stage = target;
        self.push_transition(
            cx,
            actor,
            from,
            target,
            TransitionKind::Feedback,
            reason.to_string(),
            Verb::Feedback,
        )
    }

    pub(crate) fn precheck_initiate_retirement(&self, cx: &Ctx, actor: Option<&PrincipalId>) -> Result<()> {
        self.require_active()?;
        self.require_accountable(cx, actor)
    }

    /// Enters stage XI from any stage. Requires the accountable role.
    pub fn initiate_retirement(&mut self, cx: &Ctx, actor: &PrincipalId, reason: &str) -> Result<TransitionRecord> {
        self.precheck_initiate_retirement(cx, Some(actor))?;
        if reason.trim().is_empty() {
            return Err(Error::EmptyReason);
        }
        let from = self.asset.current_stage;
        self.asset.current_stage = StageId::XI;
        self.asset.status = AssetStatus::RetirementPending;
        self.push_transition(
            cx,
            actor,
            from,
            StageId::XI,
            TransitionKind::Retire,
            reason.to_string(),
            Verb::InitiateRetirement,
        )
    }

    pub(crate) fn precheck_complete_retirement(&self, cx: &Ctx, actor: Option<&PrincipalId>) -> Result<()> {
        if self.asset.status != AssetStatus::RetirementPending {
            return Err(Error::WrongStatus {
                expected: "RetirementPending".into(),
                actual: self.asset.status.to_string(),
            });
        }
        self.require_accountable(cx, actor)
    }

    /// Retires the asset once the referenced manifest covers every stored
    /// revision, then executes the manifest's Delete decisions.
    pub fn complete_retirement(&mut self, cx: &Ctx, manifest_id: &str, actor: &PrincipalId) -> Result<Asset> {
        self.precheck_complete_retirement(cx, Some(actor))?;
        let manifest = self.manifest(manifest_id)?.clone();
        let uncovered = manifest.uncovered(&self.artifacts);
        if !uncovered.is_empty() {
            return Err(Error::ManifestIncomplete(uncovered));
        }
        self.asset.status = AssetStatus::Retired;
        let deleted: Vec<_> = manifest
            .entries
            .iter()
            .filter(|e| e.retention_action == RetentionAction::Delete)
            .map(|e| e.artifact_ref())
            .collect();
        for r in &deleted {
            self.artifacts.tombstone(r);
        }
        let asset = self.asset.clone();
        self.record(
            cx,
            actor,
            Verb::CompleteRetirement,
            manifest_id.to_string(),
            &serde_json::json!({ "manifest_id": manifest_id, "deleted": deleted }),
        )?;
        Ok(asset)
    }

    #[allow(clippy::too_many_arguments)]
    fn push_transition(
        &mut self,
        cx: &Ctx,
        actor: &PrincipalId,
        from: StageId,
        to: StageId,
        kind: TransitionKind,
        reason: String,
        verb: Verb,
    ) -> Result<TransitionRecord> {
        let rec = TransitionRecord {
            asset_id: self.asset.asset_id.clone(),
            from_stage: from,
            to_stage: to,
            kind,
            actor: actor.clone(),
            reason,
            timestamp: cx.now,
            update_cycle: self.asset.update_cycle,
        };
        self.transitions.push(rec.clone());
        self.record(cx, actor, verb, format!("{from} -> {to}"), &rec)?;
        Ok(rec)
    }
}

/// Checks the structural invariants of a transition history.
pub fn check_transition_chain(records: &[TransitionRecord]) -> Result<(), String> {
    let mut prev: Option<StageId> = None;
    for (i, r) in records.iter().enumerate() {
        let from_expected = prev.unwrap_or(StageId::I);
        if r.from_stage != from_expected {
            return Err(format!(
                "record {i}: from {} but previous ended at {from_expected}",
                r.from_stage
            ));
        }
        let ok = match r.kind {
            TransitionKind::Advance => r.from_stage.next() == Some(r.to_stage),
            TransitionKind::Redeploy => r.from_stage == StageId::X && r.to_stage == StageId::VIII,
            TransitionKind::Feedback => r.to_stage < r.from_stage,
            TransitionKind::Retire => r.to_stage == StageId::XI,
        };
        if !ok {
            return Err(format!("record {i}: {:?} {} -> {}", r.kind, r.from_stage, r.to_stage));
        }
        if matches!(r.kind, TransitionKind::Advance | TransitionKind::Redeploy)
            && phase_of(r.to_stage) < phase_of(r.from_stage)
        {
            return Err(format!("record {i}: forward step decreased the phase"));
        }
        prev = Some(r.to_stage);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cards::CardKind;
    use crate::testing::*;

    #[test]
    fn create_asset_paths() {
        let f = TestConfig::new();
        let cx = f.ctx();
        let st = AssetState::create(&cx, "a1".into(), "visual-defect-detect", "camera QA", &p("owner")).unwrap();
        assert_eq!(st.asset.current_stage, StageId::I);
        assert_eq!(st.asset.phase(), Phase::Ideation);
        assert_eq!(st.asset.status, AssetStatus::Active);
        assert_eq!(st.asset.update_cycle, 0);
        assert_eq!(st.ledger.len(), 1);
        assert_eq!(
            AssetState::create(&cx, "a2".into(), "", "x", &p("owner")).unwrap_err(),
            Error::EmptyName
        );
        assert_eq!(
            AssetState::create(&cx, "a3".into(), "a", "b", &p("nobody"))
                .unwrap_err()
                .code(),
            "UnknownPrincipal"
        );
    }

    #[test]
    fn advance_through_g1() {
        let f = TestConfig::new();
        let mut st = f.asset_with_team();
        let cx = f.ctx();
        st.advance(&cx, &p(WORKER)).unwrap();
        st.advance(&cx, &p(WORKER)).unwrap();
        assert_eq!(st.asset.current_stage, StageId::III);
        assert_eq!(
            st.advance(&cx, &p(WORKER)).unwrap_err(),
            Error::GateNotApproved { gate: GateId::G1 }
        );
        f.approve_card(&mut st, CardKind::UseCase);
        let review = st.open_gate_review(&cx, GateId::G1, &p(WORKER)).unwrap();
        assert_eq!(st.advance(&cx, &p(WORKER)).unwrap_err().code(), "GateNotApproved");
        f.pass_and_approve(&mut st, &review.review_id);
        let rec = st.advance(&cx, &p(WORKER)).unwrap();
        assert_eq!(rec.to_stage, StageId::IV);
        // a second passage through the same approval is not possible
        st.feedback(&cx, StageId::III, &p(WORKER), "rework").unwrap();
        assert_eq!(
            st.latest_review(GateId::G1).unwrap().decision,
            GateDecision::RequiresReapproval
        );
        assert_eq!(st.advance(&cx, &p(WORKER)).unwrap_err().code(), "GateNotApproved");
    }

    #[test]
    fn advance_requires_responsible_actor() {
        let f = TestConfig::new();
        let mut st = f.asset_with_team();
        let cx = f.ctx();
        assert_eq!(st.advance(&cx, &p(OUTSIDER)).unwrap_err().code(), "NotResponsible");
    }

    #[test]
    fn release_at_vii_needs_three_cards() {
        let f = TestConfig::new();
        let mut st = f.asset_at(StageId::VII);
        let cx = f.ctx();
        let r = st.open_gate_review(&cx, GateId::G2, &p(WORKER)).unwrap();
        f.pass_and_approve(&mut st, &r.review_id);
        let rec = st.advance(&cx, &p(WORKER)).unwrap();
        assert_eq!(rec.to_stage, StageId::VIII);
        for k in [CardKind::UseCase, CardKind::Dataset, CardKind::Model] {
            assert!(st.approved_card(k).is_some());
        }
    }

    #[test]
    fn terminal_stage() {
        let f = TestConfig::new();
        let mut st = f.asset_with_team();
        let cx = f.ctx();
        st.initiate_retirement(&cx, &p(APPROVER), "cancelled").unwrap();
        assert_eq!(st.advance(&cx, &p(WORKER)).unwrap_err(), Error::TerminalStage);
    }

    #[test]
    fn feedback_examples() {
        let f = TestConfig::new();
        let cx = f.ctx();
        // X -> VIII with G3 not yet approved: nothing invalidated
        let mut st = f.asset_at(StageId::X);
        let before: Vec<_> = st.reviews.iter().map(|r| r.decision).collect();
        st.feedback(&cx, StageId::VIII, &p(WORKER), "iterate").unwrap();
        let after: Vec<_> = st.reviews.iter().map(|r| r.decision).collect();
        assert_eq!(before, after);

        // V -> II flags G1 (the only gate stage in [II, V))
        let mut st = f.asset_at(StageId::V);
        st.feedback(&cx, StageId::II, &p(WORKER), "data gap").unwrap();
        assert_eq!(
            st.latest_review(GateId::G1).unwrap().decision,
            GateDecision::RequiresReapproval
        );

        let mut st = f.asset_at(StageId::IV);
        assert_eq!(
            st.feedback(&cx, StageId::VI, &p(WORKER), "x").unwrap_err(),
            Error::NotEarlierStage {
                current: StageId::IV,
                target: StageId::VI
            }
        );
        assert_eq!(
            st.feedback(&cx, StageId::II, &p(WORKER), " ").unwrap_err(),
            Error::EmptyReason
        );
    }

    #[test]
    fn feedback_gate_set_matches_enumeration() {
        // oracle: the gates flagged are exactly the gate stages in [target, from)
        let f = TestConfig::new();
        let cx = f.ctx();
        for from in [StageId::VIII, StageId::IX, StageId::X] {
            for target in StageId::all().filter(|t| *t < from) {
                let mut st = f.asset_at(from);
                let approved_before: Vec<GateId> = GateId::ALL
                    .into_iter()
                    .filter(|g| {
                        st.latest_review(*g)
                            .is_some_and(|r| r.decision == GateDecision::Approved)
                    })
                    .collect();
                st.feedback(&cx, target, &p(WORKER), "loop").unwrap();
                for g in approved_before {
                    let expect_flag = g.stage() >= target && g.stage() < from;
                    let flagged = st.latest_review(g).unwrap().decision == GateDecision::RequiresReapproval;
                    assert_eq!(flagged, expect_flag, "{from}->{target} {g}");
                }
            }
        }
    }

    #[test]
    fn retirement_paths() {
        let f = TestConfig::new();
        let cx = f.ctx();
        let mut st = f.asset_at(StageId::IX);
        assert_eq!(
            st.initiate_retirement(&cx, &p(OUTSIDER), "eol").unwrap_err().code(),
            "NotAccountable"
        );
        let rec = st.initiate_retirement(&cx, &p(APPROVER), "end of line").unwrap();
        assert_eq!(rec.to_stage, StageId::XI);
        assert_eq!(st.asset.status, AssetStatus::RetirementPending);
        assert_eq!(
            st.initiate_retirement(&cx, &p(APPROVER), "again").unwrap_err(),
            Error::AssetRetired
        );
    }

    #[test]
    fn complete_retirement_requires_pending() {
        let f = TestConfig::new();
        let cx = f.ctx();
        let mut st = f.asset_with_team();
        assert_eq!(
            st.complete_retirement(&cx, "m", &p(APPROVER)).unwrap_err().code(),
            "WrongStatus"
        );
    }

    #[test]
    fn chain_continuity_on_scripted_history() {
        let f = TestConfig::new();
        let cx = f.ctx();
        let mut st = f.asset_at(StageId::X);
        st.feedback(&cx, StageId::VIII, &p(WORKER), "again").unwrap();
        st.initiate_retirement(&cx, &p(APPROVER), "done").unwrap();
        check_transition_chain(&st.transitions).unwrap();
    }
}
