//! Enumeration of the operations currently open on an asset, used by clients
//! to offer only actions the engine would accept.

use serde::{Deserialize, Serialize};

use crate::cards::CardKind;
use crate::gates::{GateDecision, GateId, Verdict};
use crate::ids::PrincipalId;
use crate::lifecycle::AssetStatus;
use crate::operation::{DeploymentState, ProposalTrigger};
use crate::stage::StageId;
use crate::state::{AssetState, Ctx};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    BindRole,
    Advance,
    Feedback {
        target: StageId,
    },
    InitiateRetirement,
    BuildRetirementManifest,
    CompleteRetirement {
        manifest_id: String,
    },
    CreateCard {
        kind: CardKind,
    },
    ReviseCard {
        kind: CardKind,
    },
    ApproveCard {
        kind: CardKind,
    },
    OpenGateReview {
        gate: GateId,
    },
    RecordCheck {
        review_id: String,
    },
    DecideGate {
        review_id: String,
        verdict: Verdict,
    },
    OpenUpdateProposal,
    RegisterDeployment,
    TransitionDeployment {
        deployment_id: String,
        target: DeploymentState,
    },
}

impl AssetState {
    /// Actions whose preconditions hold. With a principal, role and
    /// segregation-of-duties checks apply too; without one only state
    /// preconditions are checked. Free-text inputs (reasons, rationales,
    /// card fields) are assumed valid.
    pub fn allowed_actions(&self, cx: &Ctx, principal: Option<&PrincipalId>) -> Vec<Action> {
        let mut out = Vec::new();
        let mut offer = |ok: bool, a: Action| {
            if ok {
                out.push(a);
            }
        };
        offer(self.precheck_bind_role(cx, principal).is_ok(), Action::BindRole);
        offer(self.precheck_advance(cx, principal).is_ok(), Action::Advance);
        for target in StageId::all() {
            offer(
                self.precheck_feedback(cx, target, principal).is_ok(),
                Action::Feedback { target },
            );
        }
        offer(
            self.precheck_initiate_retirement(cx, principal).is_ok(),
            Action::InitiateRetirement,
        );
        offer(
            self.asset.status == AssetStatus::RetirementPending,
            Action::BuildRetirementManifest,
        );
        if self.precheck_complete_retirement(cx, principal).is_ok() {
            for m in &self.manifests {
                offer(
                    m.uncovered(&self.artifacts).is_empty(),
                    Action::CompleteRetirement {
                        manifest_id: m.manifest_id.clone(),
                    },
                );
            }
        }
        for kind in CardKind::ALL {
            offer(
                self.precheck_create_card(cx, kind, principal).is_ok(),
                Action::CreateCard { kind },
            );
            offer(
                self.precheck_revise_card(cx, kind, principal).is_ok(),
                Action::ReviseCard { kind },
            );
            offer(
                self.precheck_approve_card(cx, kind, principal).is_ok(),
                Action::ApproveCard { kind },
            );
        }
        for gate in GateId::ALL {
            offer(
                self.precheck_open_gate_review(cx, gate, principal).is_ok(),
                Action::OpenGateReview { gate },
            );
        }
        for r in self.reviews.iter().filter(|r| r.decision == GateDecision::Open) {
            offer(
                self.precheck_record_check(cx, &r.review_id, principal).is_ok(),
                Action::RecordCheck {
                    review_id: r.review_id.clone(),
                },
            );
            for verdict in [Verdict::Approve, Verdict::Reject] {
                offer(
                    self.precheck_decide_gate(cx, &r.review_id, principal, verdict).is_ok(),
                    Action::DecideGate {
                        review_id: r.review_id.clone(),
                        verdict,
                    },
                );
            }
        }
        offer(
            self.precheck_open_update_proposal(cx, &ProposalTrigger::Manual { note: "manual".into() }, principal)
                .is_ok(),
            Action::OpenUpdateProposal,
        );
        let dep_card = self.approved_card(CardKind::Deployment).map(|c| c.revision);
        offer(
            self.approved_card(CardKind::Model).is_some()
                && self.precheck_register_deployment(cx, None, dep_card, principal).is_ok(),
            Action::RegisterDeployment,
        );
        for d in &self.deployments {
            for &target in d.state.edges() {
                let approval = (target == DeploymentState::Full).then_some(Some(d.authorized_by.as_str()));
                offer(
                    self.precheck_transition_deployment(cx, &d.deployment_id, target, principal, approval, None)
                        .is_ok(),
                    Action::TransitionDeployment {
                        deployment_id: d.deployment_id.clone(),
                        target,
                    },
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::*;

    /// Oracle: try the action on a clone with valid free-text inputs.
    fn succeeds(f: &TestConfig, st: &AssetState, who: &PrincipalId, a: &Action) -> bool {
        let cx = f.ctx();
        let mut s = st.clone();
        let r = match a {
            Action::Advance => s.advance(&cx, who).map(drop),
            Action::Feedback { target } => s.feedback(&cx, *target, who, "reason").map(drop),
            Action::InitiateRetirement => s.initiate_retirement(&cx, who, "reason").map(drop),
            Action::CreateCard { kind } => s.create_card(&cx, *kind, who, full_fields(*kind)).map(drop),
            Action::ReviseCard { kind } => s.revise_card(&cx, *kind, who, full_fields(*kind)).map(drop),
            Action::ApproveCard { kind } => s.approve_card(&cx, *kind, who, "ok").map(drop),
            Action::OpenGateReview { gate } => s.open_gate_review(&cx, *gate, who).map(drop),
            Action::DecideGate { review_id, verdict } => s.decide_gate(&cx, review_id, who, *verdict, "ok").map(drop),
            _ => return true,
        };
        r.is_ok()
    }

    #[test]
    fn listed_actions_succeed_and_unlisted_fail() {
        let f = TestConfig::new();
        for stage in [StageId::I, StageId::III, StageId::V, StageId::IX, StageId::X] {
            let mut st = f.asset_at(stage);
            if let Some(g) = GateId::at_stage(stage) {
                st.open_gate_review(&f.ctx(), g, &p(WORKER)).unwrap();
            }
            for who in [WORKER, APPROVER, OUTSIDER] {
                let who = p(who);
                let listed = st.allowed_actions(&f.ctx(), Some(&who));
                let mut candidates = vec![Action::Advance, Action::InitiateRetirement];
                candidates.extend(StageId::all().map(|target| Action::Feedback { target }));
                for kind in CardKind::ALL {
                    candidates.push(Action::CreateCard { kind });
                    candidates.push(Action::ReviseCard { kind });
                    candidates.push(Action::ApproveCard { kind });
                }
                candidates.extend(GateId::ALL.map(|gate| Action::OpenGateReview { gate }));
                for r in &st.reviews {
                    for verdict in [Verdict::Approve, Verdict::Reject] {
                        candidates.push(Action::DecideGate {
                            review_id: r.review_id.clone(),
                            verdict,
                        });
                    }
                }
                for a in candidates {
                    assert_eq!(listed.contains(&a), succeeds(&f, &st, &who, &a), "{stage} {who} {a:?}");
                }
            }
        }
    }

    #[test]
    fn anonymous_listing_is_superset() {
        let f = TestConfig::new();
        let st = f.asset_at(StageId::V);
        let any = st.allowed_actions(&f.ctx(), None);
        for who in [WORKER, APPROVER, OUTSIDER] {
            for a in st.allowed_actions(&f.ctx(), Some(&p(who))) {
                assert!(any.contains(&a), "{a:?}");
            }
        }
    }
}
