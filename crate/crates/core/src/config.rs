use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cards::CardKind;
use crate::error::{Error, Result};
use crate::gates::{default_checklist, ChecklistTemplate, GateId};
use crate::ids::PrincipalId;
use crate::operation::DriftRule;
use crate::roles::{validate_matrix, Principal, ResponsibilityMatrix, RoleCatalog};
use crate::stage::{default_stage_name, StageId};

pub const DEFAULT_LISTEN_ADDRESS: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    /// Distinct accountable approvals needed to approve a review.
    pub quorum: u32,
    /// Gates absent here use the seed checklist.
    pub checklists: BTreeMap<GateId, Vec<ChecklistTemplate>>,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            quorum: 1,
            checklists: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub principals: Vec<Principal>,
    pub roles: RoleCatalog,
    pub matrix: ResponsibilityMatrix,
    pub gates: GateConfig,
    /// Additional optional card sections, per kind.
    pub card_extensions: BTreeMap<CardKind, Vec<String>>,
    pub drift_rules: Vec<DriftRule>,
    pub stage_names: BTreeMap<StageId, String>,
    pub storage_path: Option<PathBuf>,
    pub listen_address: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            principals: Vec::new(),
            roles: RoleCatalog::default(),
            matrix: ResponsibilityMatrix::default(),
            gates: GateConfig::default(),
            card_extensions: BTreeMap::new(),
            drift_rules: Vec::new(),
            stage_names: BTreeMap::new(),
            storage_path: None,
            listen_address: DEFAULT_LISTEN_ADDRESS.to_string(),
        }
    }
}

impl EngineConfig {
    pub fn principal(&self, id: &PrincipalId) -> Option<&Principal> {
        self.principals.iter().find(|p| &p.principal_id == id)
    }

    pub fn card_extensions(&self, kind: CardKind) -> &[String] {
        self.card_extensions.get(&kind).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn checklist(&self, gate: GateId) -> Vec<ChecklistTemplate> {
        self.gates
            .checklists
            .get(&gate)
            .cloned()
            .unwrap_or_else(|| default_checklist(gate))
    }

    pub fn stage_name(&self, stage: StageId) -> &str {
        self.stage_names
            .get(&stage)
            .map(String::as_str)
            .unwrap_or_else(|| default_stage_name(stage))
    }

    /// Every violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = match validate_matrix(&self.matrix, &self.roles) {
            Ok(()) => Vec::new(),
            Err(e) => e,
        };
        if self.gates.quorum == 0 {
            errs.push("gates.quorum must be at least 1".into());
        }
        for gate in GateId::ALL {
            let items = self.checklist(gate);
            if !items.iter().any(|i| i.mandatory) {
                errs.push(format!("{gate}: checklist has no mandatory item"));
            }
            let mut seen = BTreeSet::new();
            for i in &items {
                if !seen.insert(i.item_id.as_str()) {
                    errs.push(format!("{gate}: duplicate checklist item `{}`", i.item_id));
                }
            }
        }
        let mut rule_ids = BTreeSet::new();
        for r in &self.drift_rules {
            errs.extend(r.validate());
            if !rule_ids.insert(r.rule_id.as_str()) {
                errs.push(format!("duplicate drift rule `{}`", r.rule_id));
            }
        }
        let mut pids = BTreeSet::new();
        for p in &self.principals {
            if !pids.insert(&p.principal_id) {
                errs.push(format!("duplicate principal `{}`", p.principal_id));
            }
        }
        for (kind, extra) in &self.card_extensions {
            for s in extra {
                if kind.sections().contains(&s.as_str()) {
                    errs.push(format!("{kind} card: extension `{s}` duplicates a base section"));
                }
            }
        }
        if self.listen_address.parse::<SocketAddr>().is_err() {
            errs.push(format!(
                "listen_address `{}` is not a socket address",
                self.listen_address
            ));
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roles::RoleId;

    #[test]
    fn default_config_valid() {
        assert_eq!(EngineConfig::default().validate(), Ok(()));
    }

    #[test]
    fn missing_accountable_at_vi() {
        let mut c = EngineConfig::default();
        c.matrix.0.get_mut(&StageId::VI).unwrap().accountable = None;
        assert_eq!(
            c.validate(),
            Err(Error::InvalidConfig(vec!["VI: no accountable role".into()]))
        );
    }

    #[test]
    fn g2_without_mandatory_items() {
        let mut c = EngineConfig::default();
        let items = default_checklist(GateId::G2)
            .into_iter()
            .map(|mut i| {
                i.mandatory = false;
                i
            })
            .collect();
        c.gates.checklists.insert(GateId::G2, items);
        assert_eq!(c.violations(), vec!["G2: checklist has no mandatory item".to_string()]);
    }

    #[test]
    fn quality_inspector_removed_from_g3() {
        let mut c = EngineConfig::default();
        c.matrix
            .0
            .get_mut(&StageId::X)
            .unwrap()
            .responsible
            .remove(&RoleId::from(crate::roles::QUALITY_INSPECTOR));
        let errs = c.violations();
        assert!(errs.iter().any(|e| e.contains("QualityInspector")));
    }

    #[test]
    fn json_round_trip() {
        let c = EngineConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        let back: EngineConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.stage_name(StageId::XI), default_stage_name(StageId::XI));
    }
}
