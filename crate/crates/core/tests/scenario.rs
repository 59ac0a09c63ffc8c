//! One asset driven through the engine end to end on a file store.

use std::sync::Arc;

use chrono::Duration;

use stagegate_core::audit::{verify_export, ChainStatus};
use stagegate_core::operation::{AlertStatus, DriftKind, DriftRule, MetricPoint};
use stagegate_core::testing::*;
use stagegate_core::{AssetId, CardKind, Engine, FileStore, GateId, ProposalTrigger, StageId};

fn drive_to(f: &TestConfig, st: &mut stagegate_core::AssetState, target: StageId) {
    let cx = f.ctx();
    while st.asset.current_stage < target {
        let s = st.asset.current_stage;
        for kind in CardKind::ALL.into_iter().filter(|k| k.designated_stage() == s) {
            if st.approved_card(kind).is_none() {
                f.approve_card(st, kind);
            }
        }
        if let Some(g) = GateId::at_stage(s) {
            let r = st.open_gate_review(&cx, g, &p(WORKER)).unwrap();
            f.pass_and_approve(st, &r.review_id);
        }
        st.advance(&cx, &p(WORKER)).unwrap();
    }
}

#[test]
fn drift_alert_closed_by_update_and_state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let mut f = TestConfig::new();
    f.config.drift_rules.push(DriftRule {
        rule_id: "defect-ceiling".into(),
        metric_name: "defect_rate".into(),
        kind: DriftKind::StaticBounds { min: 0.0, max: 0.05 },
    });
    let open = |f: &TestConfig| Engine::open(f.config.clone(), Arc::new(FileStore::open(dir.path()).unwrap())).unwrap();
    let engine = open(&f);
    let id = AssetId::from("line-7-weld");
    engine
        .create_asset(id.clone(), "weld inspection", "line 7 seam camera", &p(OWNER))
        .unwrap();

    let dep = engine
        .mutate(&id, |st, cx| {
            for r in f.responsible_roles() {
                st.bind_role(cx, &p(WORKER), r.as_str(), &p(OWNER))?;
            }
            for r in f.accountable_roles() {
                st.bind_role(cx, &p(APPROVER), r.as_str(), &p(OWNER))?;
            }
            drive_to(&f, st, StageId::VIII);
            Ok(f.live_deployment(st, None))
        })
        .unwrap();

    let t0 = engine.now();
    let points: Vec<MetricPoint> = [0.01, 0.02, 0.09]
        .iter()
        .enumerate()
        .map(|(i, v)| MetricPoint {
            asset_id: id.clone(),
            deployment_id: dep.clone(),
            metric_name: "defect_rate".into(),
            value: *v,
            timestamp: t0 + Duration::minutes(i as i64),
        })
        .collect();
    let out = engine.ingest_metrics(&p(WORKER), &points).unwrap();
    assert_eq!(out.accepted, 3);
    assert_eq!(out.alerts.len(), 1);
    let alert_id = out.alerts[0].alert_id.clone();

    engine
        .mutate(&id, |st, cx| {
            st.open_update_proposal(
                cx,
                ProposalTrigger::Alert {
                    alert_id: alert_id.clone(),
                },
                &p(WORKER),
            )?;
            f.approve_card(st, CardKind::Model);
            f.update_and_deploy(st);
            Ok(())
        })
        .unwrap();
    let st = engine.snapshot(&id).unwrap();
    assert_eq!(st.alert(&alert_id).unwrap().status, AlertStatus::ClosedByUpdate);
    assert_eq!(st.asset.update_cycle, 1);
    assert_eq!(engine.verify_chain(&id).unwrap(), ChainStatus::Ok);
    assert_eq!(verify_export(&engine.export_audit(&id).unwrap()), ChainStatus::Ok);

    drop(engine);
    let reopened = open(&f);
    assert_eq!(reopened.snapshot(&id).unwrap(), st);
    assert_eq!(reopened.list_assets().len(), 1);
}
