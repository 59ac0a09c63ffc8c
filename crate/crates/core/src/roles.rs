//! Role catalog, principals, per-asset role bindings, the stage RACI matrix,
//! and segregation-of-duties checks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::audit::Verb;
use crate::error::{Error, Result};
use crate::ids::{AssetId, PrincipalId};
use crate::stage::StageId;
use crate::state::{AssetState, Ctx};

pub const PRODUCT_MANAGER: &str = "ProductManager";
pub const DOMAIN_EXPERT: &str = "DomainExpert";
pub const DATA_SCIENTIST: &str = "DataScientist";
pub const DATA_ENGINEER: &str = "DataEngineer";
pub const ML_ENGINEER: &str = "MLEngineer";
pub const SOFTWARE_ENGINEER: &str = "SoftwareEngineer";
pub const DEVOPS_ENGINEER: &str = "DevOpsEngineer";
pub const COMPLIANCE_OFFICER: &str = "ComplianceOfficer";
pub const HARDWARE_ENGINEER: &str = "HardwareEngineer";
pub const INFRASTRUCTURE_ENGINEER: &str = "InfrastructureEngineer";
pub const SERVICE_ENGINEER: &str = "ServiceEngineer";
pub const QUALITY_INSPECTOR: &str = "QualityInspector";

/// OT and QA roles that every configuration must carry.
pub const MANDATORY_ROLES: [&str; 4] = [
    HARDWARE_ENGINEER,
    INFRASTRUCTURE_ENGINEER,
    SERVICE_ENGINEER,
    QUALITY_INSPECTOR,
];

pub const DEFAULT_BASELINE_ROLES: [&str; 8] = [
    PRODUCT_MANAGER,
    DOMAIN_EXPERT,
    DATA_SCIENTIST,
    DATA_ENGINEER,
    ML_ENGINEER,
    SOFTWARE_ENGINEER,
    DEVOPS_ENGINEER,
    COMPLIANCE_OFFICER,
];

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoleId(pub String);

impl RoleId {
    pub fn new(s: impl Into<String>) -> Self {
        RoleId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RoleId {
    fn from(s: &str) -> Self {
        RoleId(s.to_string())
    }
}

/// Configurable baseline roles plus extensions. The mandatory roles are
/// always members, whatever the configuration says.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoleCatalog {
    pub baseline: Vec<RoleId>,
    pub extensions: Vec<RoleId>,
}

impl Default for RoleCatalog {
    fn default() -> Self {
        RoleCatalog {
            baseline: DEFAULT_BASELINE_ROLES.iter().map(|r| RoleId::from(*r)).collect(),
            extensions: Vec::new(),
        }
    }
}

impl RoleCatalog {
    pub fn contains(&self, role: &str) -> bool {
        MANDATORY_ROLES.contains(&role)
            || self.baseline.iter().any(|r| r.0 == role)
            || self.extensions.iter().any(|r| r.0 == role)
    }

    pub fn all(&self) -> BTreeSet<RoleId> {
        MANDATORY_ROLES
            .iter()
            .map(|r| RoleId::from(*r))
            .chain(self.baseline.iter().cloned())
            .chain(self.extensions.iter().cloned())
            .collect()
    }

    pub fn resolve(&self, role: &str) -> Result<RoleId> {
        if self.contains(role) {
            Ok(RoleId::from(role))
        } else {
            Err(Error::UnknownRole(role.to_string()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub principal_id: PrincipalId,
    #[serde(default)]
    pub display_name: String,
    #[serde(default = "yes")]
    pub active: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleBinding {
    pub asset_id: AssetId,
    pub principal_id: PrincipalId,
    pub role: RoleId,
    pub bound_by: PrincipalId,
    pub bound_at: DateTime<Utc>,
}

/// RACI assignment for one stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageRaci {
    pub responsible: BTreeSet<RoleId>,
    pub accountable: Option<RoleId>,
    pub consulted: BTreeSet<RoleId>,
    pub informed: BTreeSet<RoleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponsibilityMatrix(pub BTreeMap<StageId, StageRaci>);

fn set(roles: &[&str]) -> BTreeSet<RoleId> {
    roles.iter().map(|r| RoleId::from(*r)).collect()
}

fn raci(r: &[&str], a: &str, c: &[&str], i: &[&str]) -> StageRaci {
    StageRaci {
        responsible: set(r),
        accountable: Some(RoleId::from(a)),
        consulted: set(c),
        informed: set(i),
    }
}

impl Default for ResponsibilityMatrix {
    /// Non-normative seed assignment derived from the stage activity descriptions.
    fn default() -> Self {
        let m = [
            (
                StageId::I,
                raci(
                    &[PRODUCT_MANAGER, DOMAIN_EXPERT],
                    PRODUCT_MANAGER,
                    &[DATA_SCIENTIST, COMPLIANCE_OFFICER],
                    &[HARDWARE_ENGINEER],
                ),
            ),
            (
                StageId::II,
                raci(
                    &[DATA_SCIENTIST, DATA_ENGINEER, DOMAIN_EXPERT, HARDWARE_ENGINEER],
                    PRODUCT_MANAGER,
                    &[INFRASTRUCTURE_ENGINEER],
                    &[COMPLIANCE_OFFICER],
                ),
            ),
            (
                StageId::III,
                raci(
                    &[DATA_SCIENTIST, DOMAIN_EXPERT, QUALITY_INSPECTOR],
                    PRODUCT_MANAGER,
                    &[COMPLIANCE_OFFICER, HARDWARE_ENGINEER],
                    &[ML_ENGINEER],
                ),
            ),
            (
                StageId::IV,
                raci(
                    &[DATA_ENGINEER, DATA_SCIENTIST, HARDWARE_ENGINEER],
                    ML_ENGINEER,
                    &[DOMAIN_EXPERT],
                    &[COMPLIANCE_OFFICER],
                ),
            ),
            (
                StageId::V,
                raci(
                    &[DATA_SCIENTIST, ML_ENGINEER],
                    ML_ENGINEER,
                    &[DOMAIN_EXPERT, QUALITY_INSPECTOR],
                    &[COMPLIANCE_OFFICER],
                ),
            ),
            (
                StageId::VI,
                raci(
                    &[
                        SOFTWARE_ENGINEER,
                        INFRASTRUCTURE_ENGINEER,
                        HARDWARE_ENGINEER,
                        ML_ENGINEER,
                    ],
                    SOFTWARE_ENGINEER,
                    &[DEVOPS_ENGINEER],
                    &[COMPLIANCE_OFFICER],
                ),
            ),
            (
                StageId::VII,
                raci(
                    &[QUALITY_INSPECTOR, SOFTWARE_ENGINEER, ML_ENGINEER, HARDWARE_ENGINEER],
                    COMPLIANCE_OFFICER,
                    &[DOMAIN_EXPERT],
                    &[PRODUCT_MANAGER],
                ),
            ),
            (
                StageId::VIII,
                raci(
                    &[DEVOPS_ENGINEER, SERVICE_ENGINEER, ML_ENGINEER, INFRASTRUCTURE_ENGINEER],
                    DEVOPS_ENGINEER,
                    &[HARDWARE_ENGINEER],
                    &[PRODUCT_MANAGER],
                ),
            ),
            (
                StageId::IX,
                raci(
                    &[DATA_SCIENTIST, ML_ENGINEER, SERVICE_ENGINEER, DEVOPS_ENGINEER],
                    ML_ENGINEER,
                    &[DOMAIN_EXPERT],
                    &[PRODUCT_MANAGER],
                ),
            ),
            (
                StageId::X,
                raci(
                    &[QUALITY_INSPECTOR, ML_ENGINEER, SERVICE_ENGINEER, DEVOPS_ENGINEER],
                    COMPLIANCE_OFFICER,
                    &[DOMAIN_EXPERT],
                    &[PRODUCT_MANAGER],
                ),
            ),
            (
                StageId::XI,
                raci(
                    &[
                        DEVOPS_ENGINEER,
                        INFRASTRUCTURE_ENGINEER,
                        HARDWARE_ENGINEER,
                        COMPLIANCE_OFFICER,
                    ],
                    PRODUCT_MANAGER,
                    &[DATA_ENGINEER],
                    &[SERVICE_ENGINEER],
                ),
            ),
        ];
        ResponsibilityMatrix(m.into_iter().collect())
    }
}

impl ResponsibilityMatrix {
    pub fn stage(&self, stage: StageId) -> Option<&StageRaci> {
        self.0.get(&stage)
    }

    /// Responsible roles and the accountable role for a stage.
    pub fn responsible_roles(&self, stage: StageId) -> (BTreeSet<RoleId>, Option<RoleId>) {
        match self.0.get(&stage) {
            Some(r) => (r.responsible.clone(), r.accountable.clone()),
            None => (BTreeSet::new(), None),
        }
    }

    pub fn is_responsible(&self, stage: StageId, role: &RoleId) -> bool {
        self.0.get(&stage).is_some_and(|r| r.responsible.contains(role))
    }

    pub fn is_accountable(&self, stage: StageId, role: &RoleId) -> bool {
        self.0.get(&stage).is_some_and(|r| r.accountable.as_ref() == Some(role))
    }
}

/// Checks structural soundness of a matrix against a catalog. Never fails
/// early: every violation is reported.
pub fn validate_matrix(matrix: &ResponsibilityMatrix, catalog: &RoleCatalog) -> Result<(), Vec<String>> {
    let mut out = Vec::new();
    for stage in StageId::all() {
        let Some(r) = matrix.0.get(&stage) else {
            out.push(format!("{stage}: stage missing from matrix"));
            continue;
        };
        if r.accountable.is_none() {
            out.push(format!("{stage}: no accountable role"));
        }
        if r.responsible.is_empty() {
            out.push(format!("{stage}: no responsible role"));
        }
        let referenced = r
            .responsible
            .iter()
            .chain(r.accountable.iter())
            .chain(r.consulted.iter())
            .chain(r.informed.iter());
        for role in referenced {
            if !catalog.contains(role.as_str()) {
                out.push(format!("{stage}: unknown role `{role}`"));
            }
        }
    }
    let qi = RoleId::from(QUALITY_INSPECTOR);
    for stage in crate::gates::GateId::ALL.iter().map(|g| g.stage()) {
        if !matrix.is_responsible(stage, &qi) {
            out.push(format!(
                "{stage}: {QUALITY_INSPECTOR} must be responsible at gate stage"
            ));
        }
    }
    for role in MANDATORY_ROLES {
        let rid = RoleId::from(role);
        if !matrix.0.values().any(|r| r.responsible.contains(&rid)) {
            out.push(format!("{role}: mandatory role is not responsible at any stage"));
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Segregation of duties at principal level: the approver must not appear in
/// the scope of authors and actors under review, whatever role either acted in.
pub fn check_sod(scope: &BTreeSet<PrincipalId>, approver: &PrincipalId) -> Result<()> {
    if scope.contains(approver) {
        Err(Error::SoDViolation(format!(
            "`{approver}` authored or acted on the artifacts under review"
        )))
    } else {
        Ok(())
    }
}

/// Whether an action needs a responsible or the accountable role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionClass {
    Work,
    Approval,
}

impl AssetState {
    pub fn roles_of(&self, principal: &PrincipalId) -> BTreeSet<RoleId> {
        self.bindings
            .iter()
            .filter(|b| &b.principal_id == principal)
            .map(|b| b.role.clone())
            .collect()
    }

    /// True iff `principal` holds, through its bindings on this asset, a role
    /// the matrix marks responsible (work) or accountable (approval) at `stage`.
    pub fn is_permitted(&self, cx: &Ctx, principal: &PrincipalId, class: ActionClass, stage: StageId) -> bool {
        let m = &cx.config.matrix;
        self.bindings
            .iter()
            .filter(|b| &b.principal_id == principal)
            .any(|b| match class {
                ActionClass::Work => m.is_responsible(stage, &b.role),
                ActionClass::Approval => m.is_accountable(stage, &b.role),
            })
    }

    pub(crate) fn require_responsible(&self, cx: &Ctx, actor: Option<&PrincipalId>) -> Result<()> {
        let stage = self.asset.current_stage;
        match actor {
            Some(a) if !self.is_permitted(cx, a, ActionClass::Work, stage) => Err(Error::NotResponsible {
                actor: a.clone(),
                stage,
            }),
            _ => Ok(()),
        }
    }

    pub(crate) fn require_accountable(&self, cx: &Ctx, actor: Option<&PrincipalId>) -> Result<()> {
        let stage = self.asset.current_stage;
        match actor {
            Some(a) if !self.is_permitted(cx, a, ActionClass::Approval, stage) => Err(Error::NotAccountable {
                actor: a.clone(),
                stage,
            }),
            _ => Ok(()),
        }
    }

    pub(crate) fn precheck_bind_role(&self, cx: &Ctx, actor: Option<&PrincipalId>) -> Result<()> {
        self.require_active()?;
        if let Some(a) = actor {
            let stage = self.asset.current_stage;
            if a != &self.asset.owner && !self.is_permitted(cx, a, ActionClass::Approval, stage) {
                return Err(Error::NotAuthorized(a.clone()));
            }
        }
        Ok(())
    }

    /// Binds `role` to `principal` on this asset. Re-binding an existing
    /// pair returns the original binding and records nothing.
    pub fn bind_role(
        &mut self,
        cx: &Ctx,
        principal: &PrincipalId,
        role: &str,
        actor: &PrincipalId,
    ) -> Result<RoleBinding> {
        self.precheck_bind_role(cx, Some(actor))?;
        cx.require_principal(principal)?;
        let role = cx.config.roles.resolve(role)?;
        if let Some(b) = self
            .bindings
            .iter()
            .find(|b| &b.principal_id == principal && b.role == role)
        {
            return Ok(b.clone());
        }
        let binding = RoleBinding {
            asset_id: self.asset.asset_id.clone(),
            principal_id: principal.clone(),
            role: role.clone(),
            bound_by: actor.clone(),
            bound_at: cx.now,
        };
        self.bindings.push(binding.clone());
        self.record(cx, actor, Verb::BindRole, format!("{principal} as {role}"), &binding)?;
        Ok(binding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{fixture, p};

    #[test]
    fn default_matrix_is_valid() {
        assert_eq!(
            validate_matrix(&ResponsibilityMatrix::default(), &RoleCatalog::default()),
            Ok(())
        );
    }

    #[test]
    fn missing_accountable_reported() {
        let mut m = ResponsibilityMatrix::default();
        m.0.get_mut(&StageId::VI).unwrap().accountable = None;
        let errs = validate_matrix(&m, &RoleCatalog::default()).unwrap_err();
        assert_eq!(errs, vec!["VI: no accountable role".to_string()]);
    }

    #[test]
    fn quality_inspector_required_at_gates() {
        let mut m = ResponsibilityMatrix::default();
        m.0.get_mut(&StageId::X)
            .unwrap()
            .responsible
            .remove(&RoleId::from(QUALITY_INSPECTOR));
        let errs = validate_matrix(&m, &RoleCatalog::default()).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].starts_with("X: QualityInspector"));
    }

    #[test]
    fn mandatory_roles_cannot_be_configured_away() {
        let cat = RoleCatalog {
            baseline: vec![],
            extensions: vec![],
        };
        for r in MANDATORY_ROLES {
            assert!(cat.contains(r));
        }
        assert!(!cat.contains(PRODUCT_MANAGER));
        assert_eq!(cat.resolve("Wizard"), Err(Error::UnknownRole("Wizard".into())));
    }

    #[test]
    fn cpps_roles_placed() {
        let m = ResponsibilityMatrix::default();
        let (r8, _) = m.responsible_roles(StageId::VIII);
        assert!(r8.contains(&RoleId::from(SERVICE_ENGINEER)));
        let (r6, _) = m.responsible_roles(StageId::VI);
        assert!(r6.contains(&RoleId::from(INFRASTRUCTURE_ENGINEER)));
        let (r7, _) = m.responsible_roles(StageId::VII);
        assert!(r7.contains(&RoleId::from(QUALITY_INSPECTOR)));
    }

    #[test]
    fn sod_examples() {
        let scope: BTreeSet<_> = [p("P1"), p("P2")].into_iter().collect();
        assert!(check_sod(&scope, &p("P3")).is_ok());
        let single: BTreeSet<_> = [p("P1")].into_iter().collect();
        assert_eq!(check_sod(&single, &p("P1")).unwrap_err().code(), "SoDViolation");
    }

    #[test]
    fn bind_role_paths() {
        let (cx_cfg, mut st) = fixture();
        let cx = cx_cfg.ctx();
        let b = st.bind_role(&cx, &p("P2"), SERVICE_ENGINEER, &p("owner")).unwrap();
        assert_eq!(b.role, RoleId::from(SERVICE_ENGINEER));
        let events = st.ledger.len();
        // idempotent
        st.bind_role(&cx, &p("P2"), SERVICE_ENGINEER, &p("owner")).unwrap();
        assert_eq!(st.ledger.len(), events);
        assert_eq!(
            st.bind_role(&cx, &p("P2"), "Wizard", &p("owner")).unwrap_err().code(),
            "UnknownRole"
        );
        assert_eq!(
            st.bind_role(&cx, &p("P2"), DATA_SCIENTIST, &p("P2"))
                .unwrap_err()
                .code(),
            "NotAuthorized"
        );
        assert_eq!(
            st.bind_role(&cx, &p("ghost"), DATA_SCIENTIST, &p("owner"))
                .unwrap_err()
                .code(),
            "UnknownPrincipal"
        );
    }

    #[test]
    fn permission_by_binding() {
        let (cfg, mut st) = fixture();
        let cx = cfg.ctx();
        assert!(!st.is_permitted(&cx, &p("P1"), ActionClass::Work, StageId::IV));
        st.bind_role(&cx, &p("P1"), DATA_ENGINEER, &p("owner")).unwrap();
        assert!(st.is_permitted(&cx, &p("P1"), ActionClass::Work, StageId::IV));
        assert!(!st.is_permitted(&cx, &p("P1"), ActionClass::Approval, StageId::IV));
    }
}
