//! Operation phase: metric ingestion, drift alerting, update proposals and
//! the deployment rollout state machine.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::audit::Verb;
use crate::canonical::to_canonical;
use crate::cards::{CardKind, CardStatus};
use crate::error::{Error, Result};
use crate::gates::{GateDecision, GateId};
use crate::ids::{AssetId, PrincipalId};
use crate::lifecycle::AssetStatus;
use crate::roles::ActionClass;
use crate::stage::{Phase, StageId};
use crate::state::{AssetState, Ctx};

pub const DEFAULT_WINDOW: usize = 50;
pub const DEFAULT_K: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub asset_id: AssetId,
    pub deployment_id: String,
    pub metric_name: String,
    pub value: f64,
    pub timestamp: DateTime<Utc>,
}

impl MetricPoint {
    /// Parses one line of the backfill format:
    /// `asset_id,deployment_id,metric_name,value,timestamp`.
    pub fn parse_line(line: &str) -> std::result::Result<MetricPoint, String> {
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 5 {
            return Err(format!("expected 5 comma-separated fields, found {}", parts.len()));
        }
        let value: f64 = parts[3].parse().map_err(|e| format!("value `{}`: {e}", parts[3]))?;
        let timestamp = DateTime::parse_from_rfc3339(parts[4])
            .map_err(|e| format!("timestamp `{}`: {e}", parts[4]))?
            .with_timezone(&Utc);
        Ok(MetricPoint {
            asset_id: AssetId::from(parts[0]),
            deployment_id: parts[1].to_string(),
            metric_name: parts[2].to_string(),
            value,
            timestamp,
        })
    }
}

/// Parses a backfill file, skipping blank lines and `#` comments. Errors
/// carry the 1-based line number.
pub fn parse_metric_lines(text: &str) -> std::result::Result<Vec<MetricPoint>, (usize, String)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| MetricPoint::parse_line(l).map_err(|e| (i + 1, e)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp: DateTime<Utc>,
    pub value: f64,
}

/// Points of one (deployment, metric) stream in arrival order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStream {
    pub deployment_id: String,
    pub metric_name: String,
    pub samples: Vec<Sample>,
}

impl MetricStream {
    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.value).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum DriftKind {
    StaticBounds {
        min: f64,
        max: f64,
    },
    RollingZScore {
        #[serde(default = "default_window")]
        window: usize,
        #[serde(default = "default_k")]
        k: f64,
    },
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

fn default_k() -> f64 {
    DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftRule {
    pub rule_id: String,
    pub metric_name: String,
    pub kind: DriftKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub stddev: f64,
}

/// Mean and sample standard deviation, two-pass.
pub fn window_stats(values: &[f64]) -> WindowStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let stddev = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
    WindowStats { n, mean, stddev }
}

/// Outcome of evaluating a rule at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub fired: bool,
    pub window: Option<WindowStats>,
}

impl DriftRule {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let id = &self.rule_id;
        if id.trim().is_empty() {
            errs.push("drift rule with empty rule_id".to_string());
        }
        match self.kind {
            DriftKind::StaticBounds { min, max } => {
                if !(min.is_finite() && max.is_finite() && min < max) {
                    errs.push(format!("drift rule {id}: StaticBounds needs finite min < max"));
                }
            }
            DriftKind::RollingZScore { window, k } => {
                if window < 2 {
                    errs.push(format!("drift rule {id}: window must be at least 2"));
                }
                if !(k.is_finite() && k > 0.0) {
                    errs.push(format!("drift rule {id}: k must be positive"));
                }
            }
        }
        errs
    }

    /// Evaluates `x` given the values that preceded it in its stream.
    /// RollingZScore stays silent until a full window of history exists.
    pub fn evaluate(&self, history: &[f64], x: f64) -> Detection {
        match self.kind {
            DriftKind::StaticBounds { min, max } => Detection {
                fired: !(min..=max).contains(&x),
                window: None,
            },
            DriftKind::RollingZScore { window, k } => {
                if history.len() < window {
                    return Detection {
                        fired: false,
                        window: None,
                    };
                }
                let stats = window_stats(&history[history.len() - window..]);
                let fired = if stats.stddev == 0.0 {
                    x != stats.mean
                } else {
                    (x - stats.mean).abs() > k * stats.stddev
                };
                Detection {
                    fired,
                    window: Some(stats),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlertStatus {
    Open,
    Acknowledged,
    ClosedByUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftAlert {
    pub alert_id: String,
    pub asset_id: AssetId,
    pub rule_id: String,
    pub deployment_id: String,
    pub metric_name: String,
    pub triggered_at: DateTime<Utc>,
    pub observed: f64,
    pub window: Option<WindowStats>,
    pub status: AlertStatus,
    pub proposal_id: Option<String>,
    pub closed_by_review: Option<String>,
    pub closed_by_deployment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProposalTrigger {
    Alert { alert_id: String },
    Manual { note: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProposalStatus {
    Open,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateProposal {
    pub proposal_id: String,
    pub asset_id: AssetId,
    pub trigger: ProposalTrigger,
    /// Card kinds expected to receive new revisions in this update.
    pub expected_cards: Vec<CardKind>,
    /// G3 review cycle that will decide the update.
    pub target_cycle: u32,
    pub status: ProposalStatus,
    pub opened_by: PrincipalId,
    pub opened_at: DateTime<Utc>,
    pub completed_by_review: Option<String>,
    pub completed_by_deployment: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeploymentState {
    Registered,
    Staged,
    Canary,
    Full,
    RolledBack,
    Retired,
}

impl DeploymentState {
    pub const ALL: [DeploymentState; 6] = [
        DeploymentState::Registered,
        DeploymentState::Staged,
        DeploymentState::Canary,
        DeploymentState::Full,
        DeploymentState::RolledBack,
        DeploymentState::Retired,
    ];

    /// Edges a caller may request.
    pub fn edges(self) -> &'static [DeploymentState] {
        use DeploymentState::*;
        match self {
            Registered => &[Staged],
            Staged => &[Canary],
            Canary => &[Full, RolledBack],
            Full => &[RolledBack, Retired],
            RolledBack | Retired => &[],
        }
    }

    pub fn is_terminal(self) -> bool {
        self.edges().is_empty()
    }

    pub fn is_live(self) -> bool {
        matches!(self, DeploymentState::Canary | DeploymentState::Full)
    }
}

impl fmt::Display for DeploymentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for DeploymentState {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        DeploymentState::ALL
            .into_iter()
            .find(|d| {
                d.to_string().eq_ignore_ascii_case(s)
                    || (s.eq_ignore_ascii_case("rollback") && *d == DeploymentState::RolledBack)
            })
            .ok_or_else(|| format!("unknown deployment state `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentStep {
    pub from: DeploymentState,
    pub to: DeploymentState,
    pub actor: PrincipalId,
    pub at: DateTime<Utc>,
    pub approval_ref: Option<String>,
    /// Side effects (replacement, reinstatement) are recorded without an actor request.
    pub induced_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub deployment_id: String,
    pub asset_id: AssetId,
    pub model_card_revision: u32,
    pub deployment_card_revision: Option<u32>,
    pub state: DeploymentState,
    pub canary_fraction: Option<f64>,
    pub predecessor: Option<String>,
    /// Gate review whose approval authorized this deployment.
    pub authorized_by: String,
    /// 0 for the initial release, otherwise the authorizing G3 cycle.
    pub update_cycle: u32,
    pub registered_by: PrincipalId,
    pub registered_at: DateTime<Utc>,
    pub history: Vec<DeploymentStep>,
}

impl Deployment {
    pub fn artifact_id(&self) -> String {
        format!("deployment/{}", self.deployment_id)
    }
}

/// Splits `<asset>:dep:<n>` deployment ids.
pub fn deployment_asset(deployment_id: &str) -> Option<AssetId> {
    let (asset, n) = deployment_id.rsplit_once(":dep:")?;
    n.parse::<u32>().ok()?;
    Some(AssetId::from(asset))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub accepted: usize,
    pub alerts: Vec<DriftAlert>,
}

impl AssetState {
    pub fn deployment(&self, deployment_id: &str) -> Result<&Deployment> {
        self.deployments
            .iter()
            .find(|d| d.deployment_id == deployment_id)
            .ok_or_else(|| Error::UnknownDeployment(deployment_id.to_string()))
    }

    fn deployment_index(&self, deployment_id: &str) -> Result<usize> {
        self.deployments
            .iter()
            .position(|d| d.deployment_id == deployment_id)
            .ok_or_else(|| Error::UnknownDeployment(deployment_id.to_string()))
    }

    pub fn full_deployment(&self) -> Option<&Deployment> {
        self.deployments.iter().find(|d| d.state == DeploymentState::Full)
    }

    fn stream_index(&self, deployment_id: &str, metric: &str) -> Option<usize> {
        self.streams
            .iter()
            .position(|s| s.deployment_id == deployment_id && s.metric_name == metric)
    }

    fn has_open_alert(&self, rule_id: &str) -> bool {
        self.alerts
            .iter()
            .any(|a| a.rule_id == rule_id && a.status == AlertStatus::Open)
    }

    /// Validates the whole batch before any point is stored.
    pub(crate) fn precheck_ingest(&self, points: &[MetricPoint]) -> Result<()> {
        self.require_not_retired()?;
        let mut last: BTreeMap<(&str, &str), DateTime<Utc>> = BTreeMap::new();
        for p in points {
            if p.asset_id != self.asset.asset_id {
                return Err(Error::UnknownDeployment(p.deployment_id.clone()));
            }
            if !p.value.is_finite() {
                return Err(Error::InvalidMetric);
            }
            let d = self.deployment(&p.deployment_id)?;
            if !d.state.is_live() {
                return Err(Error::InactiveDeployment(p.deployment_id.clone()));
            }
            let key = (p.deployment_id.as_str(), p.metric_name.as_str());
            let prev = last.get(&key).copied().or_else(|| {
                self.stream_index(key.0, key.1)
                    .and_then(|i| self.streams[i].samples.last())
                    .map(|s| s.timestamp)
            });
            if prev.is_some_and(|t| p.timestamp < t) {
                return Err(Error::NonMonotonicTimestamp {
                    deployment: p.deployment_id.clone(),
                    metric: p.metric_name.clone(),
                });
            }
            last.insert(key, p.timestamp);
        }
        Ok(())
    }

    /// Stores the points and evaluates the configured rules at each one.
    pub fn ingest_metrics(&mut self, cx: &Ctx, actor: &PrincipalId, points: &[MetricPoint]) -> Result<IngestOutcome> {
        cx.require_principal(actor)?;
        self.precheck_ingest(points)?;
        let mut raised = Vec::new();
        for p in points {
            let idx = match self.stream_index(&p.deployment_id, &p.metric_name) {
                Some(i) => i,
                None => {
                    self.streams.push(MetricStream {
                        deployment_id: p.deployment_id.clone(),
                        metric_name: p.metric_name.clone(),
                        samples: Vec::new(),
                    });
                    self.streams.len() - 1
                }
            };
            let history = self.streams[idx].values();
            self.streams[idx].samples.push(Sample {
                timestamp: p.timestamp,
                value: p.value,
            });
            for rule in cx.config.drift_rules.iter().filter(|r| r.metric_name == p.metric_name) {
                if let Some(a) = self.try_raise(rule, &p.deployment_id, &history, p.value, p.timestamp) {
                    raised.push(a);
                }
            }
        }
        let outcome = IngestOutcome {
            accepted: points.len(),
            alerts: raised,
        };
        self.record(
            cx,
            actor,
            Verb::IngestMetrics,
            format!("{} point(s)", points.len()),
            &serde_json::json!({
                "accepted": outcome.accepted,
                "alerts": outcome.alerts.iter().map(|a| &a.alert_id).collect::<Vec<_>>(),
            }),
        )?;
        Ok(outcome)
    }

    fn try_raise(
        &mut self,
        rule: &DriftRule,
        deployment_id: &str,
        history: &[f64],
        x: f64,
        at: DateTime<Utc>,
    ) -> Option<DriftAlert> {
        if self.has_open_alert(&rule.rule_id) {
            return None;
        }
        let already = self
            .alerts
            .iter()
            .any(|a| a.rule_id == rule.rule_id && a.deployment_id == deployment_id && a.triggered_at == at);
        let det = rule.evaluate(history, x);
        if !det.fired || already {
            return None;
        }
        let alert = DriftAlert {
            alert_id: format!("{}:alert:{}", self.asset.asset_id, self.alerts.len() + 1),
            asset_id: self.asset.asset_id.clone(),
            rule_id: rule.rule_id.clone(),
            deployment_id: deployment_id.to_string(),
            metric_name: rule.metric_name.clone(),
            triggered_at: at,
            observed: x,
            window: det.window,
            status: AlertStatus::Open,
            proposal_id: None,
            closed_by_review: None,
            closed_by_deployment: None,
        };
        self.alerts.push(alert.clone());
        Some(alert)
    }

    /// Re-evaluates every rule at the latest point of each stream, e.g. after
    /// the rule set changed. Returns the alerts opened by this call.
    pub fn evaluate_rules(&mut self, cx: &Ctx, actor: &PrincipalId) -> Result<Vec<DriftAlert>> {
        cx.require_principal(actor)?;
        self.require_not_retired()?;
        let mut raised = Vec::new();
        for si in 0..self.streams.len() {
            let s = &self.streams[si];
            let Some(last) = s.samples.last().copied() else {
                continue;
            };
            let history = s.values()[..s.samples.len() - 1].to_vec();
            let dep = s.deployment_id.clone();
            let metric = s.metric_name.clone();
            for rule in cx.config.drift_rules.iter().filter(|r| r.metric_name == metric) {
                if let Some(a) = self.try_raise(rule, &dep, &history, last.value, last.timestamp) {
                    raised.push(a);
                }
            }
        }
        if !raised.is_empty() {
            self.record(
                cx,
                actor,
                Verb::EvaluateRules,
                format!("{} alert(s)", raised.len()),
                &raised,
            )?;
        }
        Ok(raised)
    }

    pub fn alert(&self, alert_id: &str) -> Result<&DriftAlert> {
        self.alerts
            .iter()
            .find(|a| a.alert_id == alert_id)
            .ok_or_else(|| Error::UnknownAlert(alert_id.to_string()))
    }

    fn require_operation_phase(&self) -> Result<()> {
        let stage = self.asset.current_stage;
        if stage.phase() == Phase::Operation {
            Ok(())
        } else {
            Err(Error::WrongPhase(stage))
        }
    }

    pub(crate) fn precheck_open_update_proposal(
        &self,
        cx: &Ctx,
        trigger: &ProposalTrigger,
        actor: Option<&PrincipalId>,
    ) -> Result<()> {
        self.require_active()?;
        self.require_operation_phase()?;
        if let ProposalTrigger::Alert { alert_id } = trigger {
            let a = self.alert(alert_id)?;
            if a.status == AlertStatus::ClosedByUpdate {
                return Err(Error::WrongStatus {
                    expected: "Open or Acknowledged alert".into(),
                    actual: "ClosedByUpdate".into(),
                });
            }
        }
        self.require_responsible(cx, actor)
    }

    /// Opens a governed update cycle from an alert or a manual trigger such
    /// as user feedback. A triggering alert becomes Acknowledged.
    pub fn open_update_proposal(
        &mut self,
        cx: &Ctx,
        trigger: ProposalTrigger,
        actor: &PrincipalId,
    ) -> Result<UpdateProposal> {
        self.precheck_open_update_proposal(cx, &trigger, Some(actor))?;
        if let ProposalTrigger::Manual { note } = &trigger {
            if note.trim().is_empty() {
                return Err(Error::EmptyReason);
            }
        }
        let proposal = UpdateProposal {
            proposal_id: format!("{}:upd:{}", self.asset.asset_id, self.proposals.len() + 1),
            asset_id: self.asset.asset_id.clone(),
            trigger: trigger.clone(),
            expected_cards: vec![CardKind::Model, CardKind::Deployment],
            target_cycle: self.asset.update_cycle + 1,
            status: ProposalStatus::Open,
            opened_by: actor.clone(),
            opened_at: cx.now,
            completed_by_review: None,
            completed_by_deployment: None,
        };
        if let ProposalTrigger::Alert { alert_id } = &trigger {
            let a = self
                .alerts
                .iter_mut()
                .find(|a| &a.alert_id == alert_id)
                .expect("checked");
            a.status = AlertStatus::Acknowledged;
            a.proposal_id = Some(proposal.proposal_id.clone());
        }
        self.proposals.push(proposal.clone());
        self.record(
            cx,
            actor,
            Verb::OpenUpdateProposal,
            proposal.proposal_id.clone(),
            &proposal,
        )?;
        Ok(proposal)
    }

    fn require_deploy_permission(&self, cx: &Ctx, actor: Option<&PrincipalId>, action: &str) -> Result<()> {
        match actor {
            Some(a) if !self.is_permitted(cx, a, ActionClass::Work, self.asset.current_stage) => {
                Err(Error::NotPermitted {
                    actor: a.clone(),
                    action: format!("{action} at stage {}", self.asset.current_stage),
                })
            }
            _ => Ok(()),
        }
    }

    /// The approved review that would authorize the next deployment: G2 for
    /// the initial release, afterwards the latest G3 review. Each approval
    /// authorizes one deployment.
    pub fn deployment_authorization(&self) -> Result<&crate::gates::GateReview> {
        let gate = if self.deployments.is_empty() {
            GateId::G2
        } else {
            GateId::G3
        };
        self.latest_review(gate)
            .filter(|r| {
                r.decision == GateDecision::Approved && !self.deployments.iter().any(|d| d.authorized_by == r.review_id)
            })
            .ok_or(Error::GateNotApproved { gate })
    }

    fn require_approved_revision(&self, kind: CardKind, revision: u32) -> Result<()> {
        let ok = self
            .card_history(kind)
            .get((revision as usize).wrapping_sub(1))
            .is_some_and(|c| c.status == CardStatus::Approved);
        if ok {
            Ok(())
        } else {
            Err(Error::UnapprovedCardRevision { kind, revision })
        }
    }

    pub(crate) fn precheck_register_deployment(
        &self,
        cx: &Ctx,
        model_card_revision: Option<u32>,
        deployment_card_revision: Option<u32>,
        actor: Option<&PrincipalId>,
    ) -> Result<()> {
        self.require_active()?;
        let stage = self.asset.current_stage;
        if !(StageId::VII..=StageId::X).contains(&stage) {
            return Err(Error::WrongPhase(stage));
        }
        self.require_deploy_permission(cx, actor, "register a deployment")?;
        self.deployment_authorization()?;
        if let Some(rev) = model_card_revision {
            self.require_approved_revision(CardKind::Model, rev)?;
        }
        match deployment_card_revision {
            Some(rev) => self.require_approved_revision(CardKind::Deployment, rev)?,
            None if !self.deployments.is_empty() => return Err(Error::MissingOrUnapprovedCard(CardKind::Deployment)),
            None => {}
        }
        Ok(())
    }

    /// Registers a deployment of approved card revisions. The initial release
    /// may precede the deployment card, which is designated after release.
    pub fn register_deployment(
        &mut self,
        cx: &Ctx,
        model_card_revision: u32,
        deployment_card_revision: Option<u32>,
        actor: &PrincipalId,
    ) -> Result<Deployment> {
        self.precheck_register_deployment(cx, Some(model_card_revision), deployment_card_revision, Some(actor))?;
        let auth = self.deployment_authorization().expect("checked");
        let update_cycle = if auth.gate == GateId::G3 { auth.cycle } else { 0 };
        let dep = Deployment {
            deployment_id: format!("{}:dep:{}", self.asset.asset_id, self.deployments.len() + 1),
            asset_id: self.asset.asset_id.clone(),
            model_card_revision,
            deployment_card_revision,
            state: DeploymentState::Registered,
            canary_fraction: None,
            predecessor: self.full_deployment().map(|d| d.deployment_id.clone()),
            authorized_by: auth.review_id.clone(),
            update_cycle,
            registered_by: actor.clone(),
            registered_at: cx.now,
            history: Vec::new(),
        };
        self.deployments.push(dep.clone());
        self.snapshot_deployment(cx, self.deployments.len() - 1);
        self.record(cx, actor, Verb::RegisterDeployment, dep.deployment_id.clone(), &dep)?;
        Ok(dep)
    }

    fn snapshot_deployment(&mut self, cx: &Ctx, idx: usize) {
        let seq = self.next_seq();
        let d = &self.deployments[idx];
        let id = d.artifact_id();
        let bytes = to_canonical(d);
        self.artifacts.put(&id, bytes, cx.now, seq);
    }

    pub(crate) fn precheck_transition_deployment(
        &self,
        cx: &Ctx,
        deployment_id: &str,
        target: DeploymentState,
        actor: Option<&PrincipalId>,
        approval_ref: Option<Option<&str>>,
        canary_fraction: Option<Option<f64>>,
    ) -> Result<usize> {
        self.require_not_retired()?;
        let idx = self.deployment_index(deployment_id)?;
        self.require_deploy_permission(cx, actor, "transition deployments")?;
        let d = &self.deployments[idx];
        if !d.state.edges().contains(&target) {
            return Err(Error::IllegalTransition {
                from: d.state,
                to: target,
            });
        }
        if self.asset.status == AssetStatus::RetirementPending
            && !matches!(target, DeploymentState::Retired | DeploymentState::RolledBack)
        {
            return Err(Error::AssetRetired);
        }
        match target {
            DeploymentState::Canary => {
                if let Some(f) = canary_fraction {
                    if !f.is_some_and(|f| f > 0.0 && f <= 1.0) {
                        return Err(Error::InvalidCanaryFraction);
                    }
                }
            }
            DeploymentState::Full => {
                if let Some(r) = approval_ref {
                    let r = r.ok_or(Error::MissingApprovalRef)?;
                    let valid = r == d.authorized_by
                        && self
                            .reviews
                            .iter()
                            .any(|rv| rv.review_id == r && rv.decision == GateDecision::Approved);
                    if !valid {
                        return Err(Error::InvalidApprovalRef(r.to_string()));
                    }
                }
            }
            _ => {}
        }
        Ok(idx)
    }

    /// Applies one requested edge of the rollout state machine plus its side
    /// effects: entering Full retires the replaced Full deployment; rolling
    /// back a Full deployment reinstates its predecessor.
    pub fn transition_deployment(
        &mut self,
        cx: &Ctx,
        deployment_id: &str,
        target: DeploymentState,
        actor: &PrincipalId,
        approval_ref: Option<&str>,
        canary_fraction: Option<f64>,
    ) -> Result<Deployment> {
        let idx = self.precheck_transition_deployment(
            cx,
            deployment_id,
            target,
            Some(actor),
            Some(approval_ref),
            Some(canary_fraction),
        )?;
        let from = self.deployments[idx].state;
        let mut induced: Vec<(usize, DeploymentState)> = Vec::new();
        match (from, target) {
            (_, DeploymentState::Full) => {
                if let Some(old) = self.deployments.iter().position(|d| d.state == DeploymentState::Full) {
                    induced.push((old, DeploymentState::Retired));
                    self.deployments[idx].predecessor = Some(self.deployments[old].deployment_id.clone());
                } else {
                    self.deployments[idx].predecessor = None;
                }
            }
            (DeploymentState::Full, DeploymentState::RolledBack) => {
                if let Some(pred) = self.deployments[idx].predecessor.clone() {
                    if let Ok(p) = self.deployment_index(&pred) {
                        induced.push((p, DeploymentState::Full));
                    }
                }
            }
            _ => {}
        }

        let step = |from, to, induced_by: Option<String>, approval_ref: Option<String>| DeploymentStep {
            from,
            to,
            actor: actor.clone(),
            at: cx.now,
            approval_ref,
            induced_by,
        };
        let d = &mut self.deployments[idx];
        d.history
            .push(step(from, target, None, approval_ref.map(str::to_string)));
        d.state = target;
        d.canary_fraction = match target {
            DeploymentState::Canary => canary_fraction,
            DeploymentState::Full => Some(1.0),
            _ => None,
        };
        let mut touched = vec![idx];
        for (i, to) in induced {
            let other = &mut self.deployments[i];
            let prev = other.state;
            other
                .history
                .push(step(prev, to, Some(deployment_id.to_string()), None));
            other.state = to;
            other.canary_fraction = (to == DeploymentState::Full).then_some(1.0);
            touched.push(i);
        }
        self.repoint_in_flight();

        let mut closed = Vec::new();
        if target == DeploymentState::Full {
            closed = self.close_completed_updates(deployment_id);
        }
        for i in touched {
            self.snapshot_deployment(cx, i);
        }
        let dep = self.deployments[idx].clone();
        self.record(
            cx,
            actor,
            Verb::TransitionDeployment,
            format!("{deployment_id} {from} -> {target}"),
            &serde_json::json!({
                "deployment_id": deployment_id,
                "from": from,
                "to": target,
                "approval_ref": approval_ref,
                "canary_fraction": dep.canary_fraction,
                "predecessor": dep.predecessor,
                "closed_alerts": closed,
            }),
        )?;
        Ok(dep)
    }

    /// Deployments not yet live always point at the current Full deployment.
    fn repoint_in_flight(&mut self) {
        let full = self.full_deployment().map(|d| d.deployment_id.clone());
        for d in self.deployments.iter_mut() {
            if matches!(
                d.state,
                DeploymentState::Registered | DeploymentState::Staged | DeploymentState::Canary
            ) {
                d.predecessor = full.clone();
            }
        }
    }

    /// Completes the update proposals this deployment delivers and closes
    /// their alerts. Returns the closed alert ids.
    fn close_completed_updates(&mut self, deployment_id: &str) -> Vec<String> {
        let d = self.deployment(deployment_id).expect("exists").clone();
        let g3 = self
            .reviews
            .iter()
            .find(|r| r.review_id == d.authorized_by && r.gate == GateId::G3)
            .map(|r| r.cycle);
        let Some(cycle) = g3 else {
            return Vec::new();
        };
        let mut closed = Vec::new();
        for p in self.proposals.iter_mut() {
            if p.status != ProposalStatus::Open || p.target_cycle != cycle {
                continue;
            }
            p.status = ProposalStatus::Completed;
            p.completed_by_review = Some(d.authorized_by.clone());
            p.completed_by_deployment = Some(d.deployment_id.clone());
            for a in self.alerts.iter_mut() {
                if a.proposal_id.as_deref() == Some(&p.proposal_id) {
                    a.status = AlertStatus::ClosedByUpdate;
                    a.closed_by_review = Some(d.authorized_by.clone());
                    a.closed_by_deployment = Some(d.deployment_id.clone());
                    closed.push(a.alert_id.clone());
                }
            }
        }
        closed
    }
}
