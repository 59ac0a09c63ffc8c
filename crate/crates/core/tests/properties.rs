use proptest::prelude::*;

use stagegate_core::audit::{export_ndjson, verify_export, ChainStatus};
use stagegate_core::canonical::{from_canonical, to_canonical};
use stagegate_core::lifecycle::check_transition_chain;
use stagegate_core::operation::window_stats;
use stagegate_core::testing::*;
use stagegate_core::{AssetStatus, CardKind, DeploymentState, GateId, StageId};

fn json_value() -> impl Strategy<Value = serde_json::Value> {
    let leaf = prop_oneof![
        Just(serde_json::Value::Null),
        any::<bool>().prop_map(serde_json::Value::from),
        any::<i64>().prop_map(serde_json::Value::from),
        "[a-z0-9 \"\\\\]{0,12}".prop_map(serde_json::Value::from),
    ];
    leaf.prop_recursive(3, 32, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(serde_json::Value::from),
            prop::collection::vec(("[a-z]{1,6}", inner), 0..6)
                .prop_map(|kv| serde_json::Value::Object(kv.into_iter().collect())),
        ]
    })
}

#[derive(Debug, Clone)]
enum Op {
    Advance,
    PassGate,
    Feedback(u8),
    Card(CardKind),
    Retire,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        5 => Just(Op::Advance),
        3 => Just(Op::PassGate),
        1 => (1u8..=10).prop_map(Op::Feedback),
        3 => prop::sample::select(CardKind::ALL.to_vec()).prop_map(Op::Card),
        1 => Just(Op::Retire),
    ]
}

proptest! {
    #[test]
    fn canonical_bytes_ignore_key_order(pairs in prop::collection::btree_map("[a-z]{1,8}", any::<i32>(), 0..12)) {
        let forward: serde_json::Map<String, serde_json::Value> =
            pairs.iter().map(|(k, v)| (k.clone(), (*v).into())).collect();
        let mut rev = serde_json::Map::new();
        for (k, v) in pairs.iter().rev() {
            rev.insert(k.clone(), (*v).into());
        }
        prop_assert_eq!(to_canonical(&forward), to_canonical(&rev));
    }

    #[test]
    fn canonical_round_trip(v in json_value()) {
        let bytes = to_canonical(&v);
        let back: serde_json::Value = from_canonical(&bytes).unwrap();
        prop_assert_eq!(&back, &v);
        prop_assert_eq!(to_canonical(&back), bytes);
    }

    #[test]
    fn stage_text_round_trip(n in 1u8..=11) {
        let s = StageId::new(n).unwrap();
        prop_assert_eq!(s.to_string().parse::<StageId>().unwrap(), s);
    }

    #[test]
    fn window_stats_match_naive(xs in prop::collection::vec(-1e6f64..1e6, 2..80)) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let w = window_stats(&xs);
        prop_assert!((w.mean - mean).abs() <= 1e-9 * mean.abs().max(1.0));
        prop_assert!((w.stddev - var.sqrt()).abs() <= 1e-9 * var.sqrt().max(1.0));
    }

    #[test]
    fn histories_stay_well_formed(ops in prop::collection::vec(op(), 1..50)) {
        let f = TestConfig::new();
        let cx = f.ctx();
        let mut st = f.asset_with_team();
        for o in ops {
            match o {
                Op::Advance => { let _ = st.advance(&cx, &p(WORKER)); }
                Op::PassGate => {
                    if let Some(g) = GateId::at_stage(st.asset.current_stage) {
                        if let Ok(r) = st.open_gate_review(&cx, g, &p(WORKER)) {
                            f.pass_and_approve(&mut st, &r.review_id);
                        }
                    }
                }
                Op::Feedback(t) => { let _ = st.feedback(&cx, StageId::new(t).unwrap(), &p(WORKER), "rework"); }
                Op::Card(k) => {
                    if st.card_history(k).is_empty() {
                        let _ = st.create_card(&cx, k, &p(WORKER), full_fields(k));
                    }
                    let _ = st.approve_card(&cx, k, &p(APPROVER), "ok");
                }
                Op::Retire => { let _ = st.initiate_retirement(&cx, &p(APPROVER), "end of life"); }
            }
        }
        prop_assert!(check_transition_chain(&st.transitions).is_ok());
        let last = st.transitions.last().map(|t| t.to_stage).unwrap_or(StageId::I);
        prop_assert_eq!(last, st.asset.current_stage);
        if st.asset.status == AssetStatus::RetirementPending {
            prop_assert_eq!(st.asset.current_stage, StageId::XI);
        }
        prop_assert_eq!(st.verify_chain(), ChainStatus::Ok);
        prop_assert_eq!(verify_export(&export_ndjson(st.ledger.events())), ChainStatus::Ok);
        let seqs: Vec<u64> = st.ledger.events().iter().map(|e| e.seq).collect();
        prop_assert_eq!(seqs, (1..=st.ledger.len() as u64).collect::<Vec<_>>());
    }

    #[test]
    fn actor_edit_in_export_is_detected(idx in any::<prop::sample::Index>()) {
        let f = TestConfig::new();
        let st = f.asset_at(StageId::IV);
        let text = export_ndjson(st.ledger.events());
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let i = idx.index(lines.len());
        let mut v: serde_json::Value = serde_json::from_str(&lines[i]).unwrap();
        v["actor"] = serde_json::json!("mallory");
        lines[i] = v.to_string();
        prop_assert_eq!(verify_export(&lines.join("\n")), ChainStatus::Broken(i as u64 + 1));
    }

    #[test]
    fn requested_transitions_follow_edges(path in prop::collection::vec(prop::sample::select(DeploymentState::ALL.to_vec()), 1..10)) {
        let f = TestConfig::new();
        let cx = f.ctx();
        let mut st = f.asset_at(StageId::VIII);
        let model = st.approved_card(CardKind::Model).unwrap().revision;
        let d = st.register_deployment(&cx, model, None, &p(WORKER)).unwrap();
        for target in path {
            let from = st.deployment(&d.deployment_id).unwrap().state;
            let ok = st
                .transition_deployment(&cx, &d.deployment_id, target, &p(WORKER), Some(&d.authorized_by), Some(0.5))
                .is_ok();
            prop_assert_eq!(ok, from.edges().contains(&target), "{} -> {}", from, target);
        }
        let full = st.deployments.iter().filter(|d| d.state == DeploymentState::Full).count();
        prop_assert!(full <= 1);
    }
}
