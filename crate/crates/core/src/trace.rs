//! Requirement-to-element traceability for one asset.

use serde::{Deserialize, Serialize};

use crate::gates::{CheckResult, GateDecision, GateId};
use crate::ids::AssetId;
use crate::lifecycle::TransitionKind;
use crate::state::AssetState;

/// (id, requirement summary, addressed in, model elements)
pub const REQUIREMENTS: [(&str, &str, &str, &str); 7] = [
    (
        "DR1",
        "Clear roles and responsibilities",
        "All stages",
        "Extended roles; Stage responsibilities; AI Cards ownership",
    ),
    (
        "DR2",
        "Systematic engineering with defined stages",
        "All stages",
        "Staged activities with steps; sequenced flow with feedback loops",
    ),
    (
        "DR3",
        "End-to-end lifecycle coverage incl. EoL",
        "All stages",
        "Inclusion of retirement/EoL (XI) and archival process steps",
    ),
    (
        "DR4",
        "CPPS integration (OT/IT, edge/hybrid)",
        "All stages",
        "CPPS activities as process steps, e.g. hybrid testing or edge deploy",
    ),
    (
        "DR5",
        "Safe live model updates in operation",
        "VIII-X",
        "Process steps for pipelines and update gate (X); AI Card revisions",
    ),
    (
        "DR6",
        "Embedded compliance and documentation",
        "III, VII, X",
        "Gate tasks; AI Cards; evidence archives",
    ),
    (
        "DR7",
        "Quality assurance",
        "III, VII, X",
        "Quality gates and monitoring based on defined requirements",
    ),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub requirement: String,
    pub summary: String,
    pub addressed_in: String,
    pub model_elements: String,
    /// `model_elements` split on "; ".
    pub categories: Vec<String>,
    /// What this asset's history contributes to the requirement.
    pub elements: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceabilityReport {
    pub asset_id: AssetId,
    pub rows: Vec<TraceRow>,
}

impl AssetState {
    pub fn traceability_report(&self) -> TraceabilityReport {
        let rows = REQUIREMENTS
            .iter()
            .map(|(id, summary, addressed, elements)| TraceRow {
                requirement: id.to_string(),
                summary: summary.to_string(),
                addressed_in: addressed.to_string(),
                model_elements: elements.to_string(),
                categories: elements.split("; ").map(str::to_string).collect(),
                elements: self.trace_elements(id),
            })
            .collect();
        TraceabilityReport {
            asset_id: self.asset.asset_id.clone(),
            rows,
        }
    }

    fn trace_elements(&self, requirement: &str) -> Vec<String> {
        match requirement {
            "DR1" => self
                .bindings
                .iter()
                .map(|b| format!("{} as {}", b.principal_id, b.role))
                .chain(self.cards.values().flat_map(|h| {
                    h.iter()
                        .map(|c| format!("{} card r{} authored by {}", c.kind, c.revision, c.author))
                }))
                .collect(),
            "DR2" => self
                .transitions
                .iter()
                .map(|t| format!("{} -> {} ({:?}) by {}", t.from_stage, t.to_stage, t.kind, t.actor))
                .collect(),
            "DR3" => self
                .transitions
                .iter()
                .filter(|t| t.kind == TransitionKind::Retire)
                .map(|t| format!("retirement initiated at {}: {}", t.from_stage, t.reason))
                .chain(
                    self.manifests
                        .iter()
                        .map(|m| format!("{} ({:?}, {} entries)", m.manifest_id, m.status, m.entries.len())),
                )
                .collect(),
            "DR4" => self
                .reviews
                .iter()
                .flat_map(|r| {
                    r.items
                        .iter()
                        .filter(|i| i.cpps && i.result != CheckResult::Pending)
                        .map(move |i| format!("{}: {} {:?}", r.review_id, i.item_id, i.result))
                })
                .collect(),
            "DR5" => self
                .reviews
                .iter()
                .filter(|r| r.gate == GateId::G3)
                .map(|r| format!("update gate (X) cycle {}: {:?}", r.cycle, r.decision))
                .chain(self.cards.values().flat_map(|h| {
                    h.iter()
                        .filter(|c| c.revision > 1)
                        .map(|c| format!("{} card revision r{} ({:?})", c.kind, c.revision, c.status))
                }))
                .chain(
                    self.deployments
                        .iter()
                        .map(|d| format!("{} {} via {}", d.deployment_id, d.state, d.authorized_by)),
                )
                .collect(),
            "DR6" => self
                .reviews
                .iter()
                .flat_map(|r| {
                    r.items
                        .iter()
                        .filter(|i| i.result != CheckResult::Pending)
                        .map(move |i| format!("gate task {}/{}: {:?}", r.review_id, i.item_id, i.result))
                })
                .chain(self.cards.values().flat_map(|h| {
                    h.iter()
                        .map(|c| format!("{} card r{} ({:?})", c.kind, c.revision, c.status))
                }))
                .chain(self.evidence.values().map(|e| format!("evidence {}", e.evidence_id)))
                .collect(),
            "DR7" => self
                .reviews
                .iter()
                .filter(|r| r.decision != GateDecision::Open)
                .map(|r| {
                    format!(
                        "{} {} cycle {}: {:?}",
                        r.review_id,
                        r.gate.purpose(),
                        r.cycle,
                        r.decision
                    )
                })
                .chain(
                    self.alerts
                        .iter()
                        .map(|a| format!("{} {} {:?}", a.alert_id, a.rule_id, a.status)),
                )
                .collect(),
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::stage::StageId;
    use crate::testing::*;

    #[test]
    fn fresh_asset_has_seven_empty_rows() {
        let f = TestConfig::new();
        let rep = f.fresh_asset().traceability_report();
        assert_eq!(rep.rows.len(), 7);
        for (i, r) in rep.rows.iter().enumerate() {
            assert_eq!(r.requirement, format!("DR{}", i + 1));
            assert!(r.elements.is_empty(), "{}", r.requirement);
        }
    }

    #[test]
    fn dr5_and_dr6_categories() {
        let f = TestConfig::new();
        let rep = f.asset_at(StageId::VIII).traceability_report();
        assert_eq!(
            rep.rows[4].categories,
            vec!["Process steps for pipelines and update gate (X)", "AI Card revisions"]
        );
        assert_eq!(rep.rows[4].addressed_in, "VIII-X");
        assert_eq!(
            rep.rows[5].categories,
            vec!["Gate tasks", "AI Cards", "evidence archives"]
        );
        assert!(!rep.rows[5].elements.is_empty());
        assert!(rep.rows[3].elements.iter().any(|e| e.contains("pilot_tests")));
    }
}
