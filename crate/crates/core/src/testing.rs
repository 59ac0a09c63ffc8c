//! Fixtures shared by unit tests, integration tests and the acceptance
//! suite. Not part of the stable API.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, TimeZone, Utc};

use crate::cards::CardKind;
use crate::config::EngineConfig;
use crate::gates::{CheckResult, GateId, Verdict};
use crate::ids::{AssetId, PrincipalId};
use crate::operation::DeploymentState;
use crate::roles::{Principal, RoleId};
use crate::stage::StageId;
use crate::state::{AssetState, Ctx};

pub const ASSET: &str = "asset-1";
pub const OWNER: &str = "owner";
/// Holds every role responsible at some stage.
pub const WORKER: &str = "P1";
/// Holds every accountable role.
pub const APPROVER: &str = "P2";
/// Known principal without bindings.
pub const OUTSIDER: &str = "P3";
pub const APPROVER2: &str = "P4";

pub fn p(id: &str) -> PrincipalId {
    PrincipalId::from(id)
}

pub fn principals(ids: &[&str]) -> Vec<Principal> {
    ids.iter()
        .map(|id| Principal {
            principal_id: p(id),
            display_name: id.to_string(),
            active: true,
        })
        .collect()
}

pub fn full_fields(kind: CardKind) -> BTreeMap<String, String> {
    kind.sections()
        .iter()
        .map(|s| {
            let v = match *s {
                "target_environment" => "edge".to_string(),
                "training_data_ref" => "dataset@1".to_string(),
                other => format!("{other} for the {kind} card"),
            };
            (s.to_string(), v)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TestConfig {
    pub config: EngineConfig,
    pub now: DateTime<Utc>,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self::new()
    }
}

impl TestConfig {
    pub fn new() -> Self {
        let config = EngineConfig {
            principals: principals(&[OWNER, WORKER, APPROVER, OUTSIDER, APPROVER2]),
            ..EngineConfig::default()
        };
        TestConfig {
            config,
            now: Utc.with_ymd_and_hms(2025, 3, 1, 8, 0, 0).unwrap(),
        }
    }

    pub fn ctx(&self) -> Ctx<'_> {
        Ctx::new(&self.config, self.now)
    }

    pub fn responsible_roles(&self) -> BTreeSet<RoleId> {
        self.config
            .matrix
            .0
            .values()
            .flat_map(|r| r.responsible.iter().cloned())
            .collect()
    }

    pub fn accountable_roles(&self) -> BTreeSet<RoleId> {
        self.config
            .matrix
            .0
            .values()
            .filter_map(|r| r.accountable.clone())
            .collect()
    }

    pub fn fresh_asset(&self) -> AssetState {
        AssetState::create(
            &self.ctx(),
            AssetId::from(ASSET),
            "visual-inspection",
            "weld seam defect detection",
            &p(OWNER),
        )
        .expect("fixture asset")
    }

    /// Fresh asset with WORKER and APPROVER bound.
    pub fn asset_with_team(&self) -> AssetState {
        let cx = self.ctx();
        let mut st = self.fresh_asset();
        for r in self.responsible_roles() {
            st.bind_role(&cx, &p(WORKER), r.as_str(), &p(OWNER)).unwrap();
        }
        for r in self.accountable_roles() {
            st.bind_role(&cx, &p(APPROVER), r.as_str(), &p(OWNER)).unwrap();
        }
        st
    }

    /// Writes a new revision of `kind` as WORKER and approves it as APPROVER.
    pub fn approve_card(&self, st: &mut AssetState, kind: CardKind) {
        let cx = self.ctx();
        if st.card_history(kind).is_empty() {
            st.create_card(&cx, kind, &p(WORKER), full_fields(kind)).unwrap();
        } else {
            st.revise_card(&cx, kind, &p(WORKER), full_fields(kind)).unwrap();
        }
        st.approve_card(&cx, kind, &p(APPROVER), "fixture approval").unwrap();
    }

    /// Passes every item as WORKER, then approves as APPROVER.
    pub fn pass_and_approve(&self, st: &mut AssetState, review_id: &str) {
        let cx = self.ctx();
        let items: Vec<String> = st
            .review(review_id)
            .unwrap()
            .items
            .iter()
            .filter(|i| i.result != CheckResult::Pass)
            .map(|i| i.item_id.clone())
            .collect();
        for item in items {
            st.record_check(&cx, review_id, &item, CheckResult::Pass, &[], &p(WORKER))
                .unwrap();
        }
        st.decide_gate(&cx, review_id, &p(APPROVER), Verdict::Approve, "fixture approval")
            .unwrap();
    }

    /// Drives a fresh asset forward until it sits at `target`, producing the
    /// card designated at each stage and passing every gate on the way.
    pub fn asset_at(&self, target: StageId) -> AssetState {
        if target == StageId::XI {
            let mut st = self.asset_at(StageId::X);
            st.initiate_retirement(&self.ctx(), &p(APPROVER), "end of life")
                .unwrap();
            return st;
        }
        let cx = self.ctx();
        let mut st = self.asset_with_team();
        loop {
            let s = st.asset.current_stage;
            for kind in CardKind::ALL.into_iter().filter(|k| k.designated_stage() == s) {
                if st.approved_card(kind).is_none() {
                    self.approve_card(&mut st, kind);
                }
            }
            if s == target {
                return st;
            }
            if let Some(g) = GateId::at_stage(s) {
                let r = st.open_gate_review(&cx, g, &p(WORKER)).unwrap();
                self.pass_and_approve(&mut st, &r.review_id);
            }
            st.advance(&cx, &p(WORKER)).unwrap();
        }
    }

    /// Registers a deployment of the approved model and promotes it to Full.
    pub fn live_deployment(&self, st: &mut AssetState, deployment_card: Option<u32>) -> String {
        let cx = self.ctx();
        let model = st.approved_card(CardKind::Model).unwrap().revision;
        let d = st.register_deployment(&cx, model, deployment_card, &p(WORKER)).unwrap();
        let id = d.deployment_id.clone();
        st.transition_deployment(&cx, &id, DeploymentState::Staged, &p(WORKER), None, None)
            .unwrap();
        st.transition_deployment(&cx, &id, DeploymentState::Canary, &p(WORKER), None, Some(0.1))
            .unwrap();
        st.transition_deployment(
            &cx,
            &id,
            DeploymentState::Full,
            &p(WORKER),
            Some(&d.authorized_by),
            None,
        )
        .unwrap();
        id
    }

    /// One update cycle from stage VIII: reach X, pass G3, roll out the new
    /// deployment to Full and return to VIII. Returns the new deployment id.
    pub fn update_and_deploy(&self, st: &mut AssetState) -> String {
        let cx = self.ctx();
        while st.asset.current_stage < StageId::X {
            if st.asset.current_stage == StageId::IX && st.approved_card(CardKind::Deployment).is_none() {
                self.approve_card(st, CardKind::Deployment);
            }
            st.advance(&cx, &p(WORKER)).unwrap();
        }
        let r = st.open_gate_review(&cx, GateId::G3, &p(WORKER)).unwrap();
        self.pass_and_approve(st, &r.review_id);
        let dep_rev = st.approved_card(CardKind::Deployment).map(|c| c.revision);
        let id = self.live_deployment(st, dep_rev);
        st.advance(&cx, &p(WORKER)).unwrap();
        id
    }
}

/// Test config plus a freshly created asset with no role bindings.
pub fn fixture() -> (TestConfig, AssetState) {
    let f = TestConfig::new();
    let st = f.fresh_asset();
    (f, st)
}
