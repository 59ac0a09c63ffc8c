//! AI Cards: structured, versioned documentation of the use case, dataset,
//! model and deployment of an asset.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::audit::Verb;
use crate::canonical::{to_canonical, Digest};
use crate::error::{Error, Result};
use crate::ids::{AssetId, PrincipalId};
use crate::roles::{check_sod, ActionClass};
use crate::stage::StageId;
use crate::state::{AssetState, Ctx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CardKind {
    UseCase,
    Dataset,
    Model,
    Deployment,
}

impl CardKind {
    pub const ALL: [CardKind; 4] = [
        CardKind::UseCase,
        CardKind::Dataset,
        CardKind::Model,
        CardKind::Deployment,
    ];

    /// Stage at which the card is first produced.
    pub fn designated_stage(self) -> StageId {
        match self {
            CardKind::UseCase => StageId::III,
            CardKind::Dataset => StageId::IV,
            CardKind::Model => StageId::V,
            CardKind::Deployment => StageId::IX,
        }
    }

    /// Base schema; every listed section is mandatory at approval.
    pub fn sections(self) -> &'static [&'static str] {
        match self {
            CardKind::UseCase => &[
                "business_goal",
                "stakeholders",
                "cpps_boundaries",
                "data_availability_summary",
                "risks",
            ],
            CardKind::Dataset => &[
                "sources",
                "collection_context",
                "preprocessing",
                "quality_metrics",
                "limits",
            ],
            CardKind::Model => &[
                "intended_use",
                "training_data_ref",
                "evaluation_metrics",
                "limits",
                "risks",
            ],
            CardKind::Deployment => &[
                "target_environment",
                "rollout_strategy",
                "monitoring_plan",
                "rollback_plan",
                "risks",
            ],
        }
    }

    pub fn artifact_id(self) -> String {
        format!("card/{self:?}")
    }
}

impl fmt::Display for CardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for CardKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "usecase" => Ok(CardKind::UseCase),
            "dataset" => Ok(CardKind::Dataset),
            "model" => Ok(CardKind::Model),
            "deployment" => Ok(CardKind::Deployment),
            _ => Err(format!("unknown card kind `{s}`")),
        }
    }
}

/// Kinds whose designated stage is at or before `stage`.
pub fn required_cards(stage: StageId) -> BTreeSet<CardKind> {
    CardKind::ALL
        .into_iter()
        .filter(|k| k.designated_stage() <= stage)
        .collect()
}

pub const TARGET_ENVIRONMENTS: [&str; 3] = ["edge", "hybrid", "cloud"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CardStatus {
    Draft,
    Approved,
    Superseded,
}

/// One revision of a card.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AiCard {
    pub asset_id: AssetId,
    pub kind: CardKind,
    pub revision: u32,
    pub status: CardStatus,
    pub author: PrincipalId,
    pub approver: Option<PrincipalId>,
    pub approval_rationale: Option<String>,
    pub created_at: DateTime<Utc>,
    pub approved_at: Option<DateTime<Utc>>,
    pub content_hash: Digest,
    pub fields: BTreeMap<String, String>,
}

/// The immutable content of a revision, rendered canonically and hashed.
/// Review status lives outside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardDocument {
    pub asset_id: AssetId,
    pub kind: CardKind,
    pub revision: u32,
    pub author: PrincipalId,
    pub created_at: DateTime<Utc>,
    pub fields: BTreeMap<String, String>,
}

impl AiCard {
    pub fn document(&self) -> CardDocument {
        CardDocument {
            asset_id: self.asset_id.clone(),
            kind: self.kind,
            revision: self.revision,
            author: self.author.clone(),
            created_at: self.created_at,
            fields: self.fields.clone(),
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        to_canonical(&self.document())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderFormat {
    Canonical,
    Markdown,
}

impl FromStr for RenderFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "canonical" | "json" => Ok(RenderFormat::Canonical),
            "markdown" | "md" => Ok(RenderFormat::Markdown),
            _ => Err(format!("unknown format `{s}`")),
        }
    }
}

pub fn render_markdown(card: &AiCard, extra_sections: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {} card: {} (revision {})",
        card.kind, card.asset_id, card.revision
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "- Status: {:?}", card.status);
    let _ = writeln!(out, "- Author: {}", card.author);
    if let Some(a) = &card.approver {
        let _ = writeln!(out, "- Approver: {a}");
    }
    if let Some(r) = &card.approval_rationale {
        let _ = writeln!(out, "- Approval rationale: {r}");
    }
    let _ = writeln!(out, "- Created: {}", card.created_at.to_rfc3339());
    let _ = writeln!(out, "- Content hash: {}", card.content_hash);
    let order = card
        .kind
        .sections()
        .iter()
        .map(|s| s.to_string())
        .chain(extra_sections.iter().cloned());
    for section in order {
        let body = card.fields.get(&section).map(String::as_str).unwrap_or("");
        let _ = writeln!(out);
        let _ = writeln!(out, "## {}", title_case(&section));
        let _ = writeln!(out);
        let _ = writeln!(out, "{}", if body.trim().is_empty() { "_(empty)_" } else { body });
    }
    out
}

fn title_case(section: &str) -> String {
    section
        .split('_')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses `dataset@<revision>`.
pub fn parse_dataset_ref(s: &str) -> Option<u32> {
    let (kind, rev) = s.trim().split_once('@')?;
    if !kind.eq_ignore_ascii_case("dataset") {
        return None;
    }
    rev.trim().parse().ok().filter(|r| *r >= 1)
}

impl AssetState {
    pub fn card_history(&self, kind: CardKind) -> &[AiCard] {
        self.cards.get(&kind).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn approved_card(&self, kind: CardKind) -> Option<&AiCard> {
        self.card_history(kind)
            .iter()
            .find(|c| c.status == CardStatus::Approved)
    }

    fn allowed_sections(&self, cx: &Ctx, kind: CardKind) -> BTreeSet<String> {
        kind.sections()
            .iter()
            .map(|s| s.to_string())
            .chain(cx.config.card_extensions(kind).iter().cloned())
            .collect()
    }

    fn check_fields(&self, cx: &Ctx, kind: CardKind, fields: &BTreeMap<String, String>) -> Result<()> {
        let allowed = self.allowed_sections(cx, kind);
        if let Some(unknown) = fields.keys().find(|k| !allowed.contains(*k)) {
            return Err(Error::UnknownSection {
                kind,
                section: unknown.clone(),
            });
        }
        Ok(())
    }

    pub(crate) fn precheck_create_card(&self, cx: &Ctx, kind: CardKind, author: Option<&PrincipalId>) -> Result<()> {
        self.require_active()?;
        let current = self.asset.current_stage;
        let designated = kind.designated_stage();
        if current < designated {
            return Err(Error::StageTooEarly {
                kind,
                designated,
                current,
            });
        }
        if self.cards.contains_key(&kind) {
            return Err(Error::DuplicateCard(kind));
        }
        self.require_card_work(cx, author, kind)
    }

    fn require_card_work(&self, cx: &Ctx, author: Option<&PrincipalId>, kind: CardKind) -> Result<()> {
        match author {
            Some(a) if !self.is_permitted(cx, a, ActionClass::Work, self.asset.current_stage) => {
                Err(Error::NotPermitted {
                    actor: a.clone(),
                    action: format!("author the {kind} card at stage {}", self.asset.current_stage),
                })
            }
            _ => Ok(()),
        }
    }

    pub fn create_card(
        &mut self,
        cx: &Ctx,
        kind: CardKind,
        author: &PrincipalId,
        fields: BTreeMap<String, String>,
    ) -> Result<AiCard> {
        self.precheck_create_card(cx, kind, Some(author))?;
        self.check_fields(cx, kind, &fields)?;
        Ok(self.push_revision(cx, kind, author, fields, Verb::CreateCard))
    }

    pub(crate) fn precheck_revise_card(&self, cx: &Ctx, kind: CardKind, author: Option<&PrincipalId>) -> Result<()> {
        self.require_active()?;
        if !self.cards.contains_key(&kind) {
            return Err(Error::NoSuchCard(kind));
        }
        self.require_card_work(cx, author, kind)
    }

    /// Adds a Draft revision. The currently approved revision stays approved
    /// until the new one is.
    pub fn revise_card(
        &mut self,
        cx: &Ctx,
        kind: CardKind,
        author: &PrincipalId,
        fields: BTreeMap<String, String>,
    ) -> Result<AiCard> {
        self.precheck_revise_card(cx, kind, Some(author))?;
        self.check_fields(cx, kind, &fields)?;
        Ok(self.push_revision(cx, kind, author, fields, Verb::ReviseCard))
    }

    fn push_revision(
        &mut self,
        cx: &Ctx,
        kind: CardKind,
        author: &PrincipalId,
        fields: BTreeMap<String, String>,
        verb: Verb,
    ) -> AiCard {
        let revision = self.card_history(kind).len() as u32 + 1;
        let mut card = AiCard {
            asset_id: self.asset.asset_id.clone(),
            kind,
            revision,
            status: CardStatus::Draft,
            author: author.clone(),
            approver: None,
            approval_rationale: None,
            created_at: cx.now,
            approved_at: None,
            content_hash: Digest::ZERO,
            fields,
        };
        let bytes = card.canonical_bytes();
        let seq = self.next_seq();
        let meta = self.artifacts.put(&kind.artifact_id(), bytes, cx.now, seq);
        debug_assert_eq!(meta.revision, revision);
        card.content_hash = meta.content_hash;
        self.cards.entry(kind).or_default().push(card.clone());
        self.record(
            cx,
            author,
            verb,
            format!("{kind} card r{revision}"),
            &serde_json::json!({
                "kind": kind,
                "revision": revision,
                "stage": self.asset.current_stage,
                "content_hash": card.content_hash,
            }),
        )
        .expect("ledger append is infallible in memory");
        card
    }

    /// Mandatory-section and cross-reference problems of a revision.
    fn approval_defects(&self, card: &AiCard) -> Result<()> {
        let missing: Vec<String> = card
            .kind
            .sections()
            .iter()
            .filter(|s| card.fields.get(**s).is_none_or(|v| v.trim().is_empty()))
            .map(|s| s.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingSections(missing));
        }
        match card.kind {
            CardKind::Deployment => {
                let env = card.fields["target_environment"].trim().to_ascii_lowercase();
                if !TARGET_ENVIRONMENTS.contains(&env.as_str()) {
                    return Err(Error::InvalidSection {
                        section: "target_environment".into(),
                        reason: "must be one of edge, hybrid, cloud".into(),
                    });
                }
            }
            CardKind::Model => {
                let r = &card.fields["training_data_ref"];
                let ok =
                    parse_dataset_ref(r).is_some_and(|rev| rev as usize <= self.card_history(CardKind::Dataset).len());
                if !ok {
                    return Err(Error::InvalidSection {
                        section: "training_data_ref".into(),
                        reason: format!("`{r}` does not reference a Dataset card revision (dataset@<rev>)"),
                    });
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub(crate) fn precheck_approve_card(&self, cx: &Ctx, kind: CardKind, approver: Option<&PrincipalId>) -> Result<()> {
        self.require_active()?;
        let latest = self.card_history(kind).last().ok_or(Error::NoSuchCard(kind))?;
        if latest.status != CardStatus::Draft {
            return Err(Error::NotDraft);
        }
        if let Some(a) = approver {
            let scope: BTreeSet<PrincipalId> = [latest.author.clone()].into_iter().collect();
            check_sod(&scope, a)?;
            if !self.is_permitted(cx, a, ActionClass::Approval, self.asset.current_stage) {
                return Err(Error::NotPermitted {
                    actor: a.clone(),
                    action: format!("approve cards at stage {}", self.asset.current_stage),
                });
            }
        }
        self.approval_defects(latest)
    }

    /// Approves the latest Draft revision and supersedes every earlier one.
    pub fn approve_card(
        &mut self,
        cx: &Ctx,
        kind: CardKind,
        approver: &PrincipalId,
        rationale: &str,
    ) -> Result<AiCard> {
        self.precheck_approve_card(cx, kind, Some(approver))?;
        if rationale.trim().is_empty() {
            return Err(Error::EmptyRationale);
        }
        let history = self.cards.get_mut(&kind).expect("checked");
        let n = history.len();
        for c in &mut history[..n - 1] {
            c.status = CardStatus::Superseded;
        }
        let latest = &mut history[n - 1];
        latest.status = CardStatus::Approved;
        latest.approver = Some(approver.clone());
        latest.approval_rationale = Some(rationale.to_string());
        latest.approved_at = Some(cx.now);
        let card = latest.clone();
        self.record(
            cx,
            approver,
            Verb::ApproveCard,
            format!("{kind} card r{}", card.revision),
            &serde_json::json!({
                "kind": kind,
                "revision": card.revision,
                "author": card.author,
                "rationale": rationale,
                "content_hash": card.content_hash,
            }),
        )?;
        Ok(card)
    }

    pub fn card_revision(&self, kind: CardKind, revision: u32) -> Result<&AiCard> {
        if revision == 0 {
            return Err(Error::NoSuchRevision {
                artifact: kind.artifact_id(),
                revision,
            });
        }
        self.card_history(kind)
            .get(revision as usize - 1)
            .ok_or_else(|| Error::NoSuchRevision {
                artifact: kind.artifact_id(),
                revision,
            })
    }

    pub fn render_card(&self, cx: &Ctx, kind: CardKind, revision: u32, format: RenderFormat) -> Result<Vec<u8>> {
        let card = self.card_revision(kind, revision)?;
        Ok(match format {
            RenderFormat::Canonical => card.canonical_bytes(),
            RenderFormat::Markdown => render_markdown(card, cx.config.card_extensions(kind)).into_bytes(),
        })
    }
}
