use thiserror::Error;

use crate::audit::ArtifactRef;
use crate::cards::CardKind;
use crate::gates::GateId;
use crate::ids::{AssetId, PrincipalId};
use crate::operation::DeploymentState;
use crate::stage::StageId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure an engine operation can report.
///
/// [`Error::code`] gives the stable machine code surfaced by the HTTP API and
/// CLI; codes are the variant names and must not change.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    // lifecycle
    #[error("asset name must not be empty")]
    EmptyName,
    #[error("unknown or inactive principal `{0}`")]
    UnknownPrincipal(PrincipalId),
    #[error("asset id `{0}` already exists or is malformed")]
    DuplicateId(AssetId),
    #[error("unknown asset `{0}`")]
    UnknownAsset(AssetId),
    #[error("gate {gate} has no approved review authorizing this passage")]
    GateNotApproved { gate: GateId },
    #[error("{0:?} card is missing or has no approved revision")]
    MissingOrUnapprovedCard(CardKind),
    #[error("`{actor}` holds no role responsible for stage {stage}")]
    NotResponsible { actor: PrincipalId, stage: StageId },
    #[error("stage XI is terminal")]
    TerminalStage,
    #[error("asset is retired or pending retirement")]
    AssetRetired,
    #[error("target stage {target} is not earlier than current stage {current}")]
    NotEarlierStage { current: StageId, target: StageId },
    #[error("a non-empty reason is required")]
    EmptyReason,
    #[error("`{actor}` does not hold the accountable role for stage {stage}")]
    NotAccountable { actor: PrincipalId, stage: StageId },
    #[error("retirement manifest does not cover {} artifact revision(s)", .0.len())]
    ManifestIncomplete(Vec<ArtifactRef>),
    #[error("operation requires status {expected}, asset is {actual}")]
    WrongStatus { expected: String, actual: String },
    #[error("unknown retirement manifest `{0}`")]
    UnknownManifest(String),

    // roles
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("`{0}` is neither the asset owner nor accountable for the current stage")]
    NotAuthorized(PrincipalId),

    // cards
    #[error("{kind:?} card is designated at stage {designated}; asset is at {current}")]
    StageTooEarly {
        kind: CardKind,
        designated: StageId,
        current: StageId,
    },
    #[error("{0:?} card already exists")]
    DuplicateCard(CardKind),
    #[error("`{actor}` is not permitted to {action}")]
    NotPermitted { actor: PrincipalId, action: String },
    #[error("no {0:?} card on this asset")]
    NoSuchCard(CardKind),
    #[error("segregation of duties: {0}")]
    SoDViolation(String),
    #[error("mandatory sections empty: {}", .0.join(", "))]
    MissingSections(Vec<String>),
    #[error("section `{section}` is invalid: {reason}")]
    InvalidSection { section: String, reason: String },
    #[error("unknown section `{section}` for {kind:?} card")]
    UnknownSection { kind: CardKind, section: String },
    #[error("no revision {revision} of `{artifact}`")]
    NoSuchRevision { artifact: String, revision: u32 },
    #[error("latest revision is not a draft")]
    NotDraft,

    // gates
    #[error("gate {gate} is reviewed at stage {expected}; asset is at {current}")]
    WrongStage {
        gate: GateId,
        expected: StageId,
        current: StageId,
    },
    #[error("gate {0} already has an open review")]
    ReviewAlreadyOpen(GateId),
    #[error("unknown gate review `{0}`")]
    UnknownReview(String),
    #[error("gate review `{0}` is not open")]
    ReviewNotOpen(String),
    #[error("unknown checklist item `{0}`")]
    UnknownItem(String),
    #[error("unknown evidence `{0}`")]
    MissingEvidence(String),
    #[error("mandatory checklist items not passed: {}", .0.join(", "))]
    MandatoryItemNotPassed(Vec<String>),
    #[error("a non-empty rationale is required")]
    EmptyRationale,
    #[error("principal `{0}` already approved this review")]
    DuplicateApproval(PrincipalId),

    // operation loop
    #[error("unknown deployment `{0}`")]
    UnknownDeployment(String),
    #[error("deployment `{0}` is not in Canary or Full")]
    InactiveDeployment(String),
    #[error("timestamp regression in stream {deployment}/{metric}")]
    NonMonotonicTimestamp { deployment: String, metric: String },
    #[error("metric value must be finite")]
    InvalidMetric,
    #[error("operation requires the operation phase (VIII–X); asset is at {0}")]
    WrongPhase(StageId),
    #[error("unknown alert `{0}`")]
    UnknownAlert(String),
    #[error("{kind:?} card revision {revision} is not approved")]
    UnapprovedCardRevision { kind: CardKind, revision: u32 },
    #[error("illegal deployment transition {from:?} -> {to:?}")]
    IllegalTransition { from: DeploymentState, to: DeploymentState },
    #[error("promotion to Full requires an approval reference")]
    MissingApprovalRef,
    #[error("approval reference `{0}` is not the approved review that authorized this deployment")]
    InvalidApprovalRef(String),
    #[error("canary fraction must lie in (0, 1]")]
    InvalidCanaryFraction,

    // audit store
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("retention decisions leave {} revision(s) uncovered", .0.len())]
    IncompleteDecisions(Vec<ArtifactRef>),
    #[error("stored digest mismatch for `{artifact}` revision {revision}")]
    DigestMismatch { artifact: String, revision: u32 },
    #[error("revision {revision} of `{artifact}` was deleted under retention policy")]
    RevisionDeleted { artifact: String, revision: u32 },

    // configuration
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
}

impl Error {
    /// Stable machine code.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            EmptyName => "EmptyName",
            UnknownPrincipal(_) => "UnknownPrincipal",
            DuplicateId(_) => "DuplicateId",
            UnknownAsset(_) => "UnknownAsset",
            GateNotApproved { .. } => "GateNotApproved",
            MissingOrUnapprovedCard(_) => "MissingOrUnapprovedCard",
            NotResponsible { .. } => "NotResponsible",
            TerminalStage => "TerminalStage",
            AssetRetired => "AssetRetired",
            NotEarlierStage { .. } => "NotEarlierStage",
            EmptyReason => "EmptyReason",
            NotAccountable { .. } => "NotAccountable",
            ManifestIncomplete(_) => "ManifestIncomplete",
            WrongStatus { .. } => "WrongStatus",
            UnknownManifest(_) => "UnknownManifest",
            UnknownRole(_) => "UnknownRole",
            NotAuthorized(_) => "NotAuthorized",
            StageTooEarly { .. } => "StageTooEarly",
            DuplicateCard(_) => "DuplicateCard",
            NotPermitted { .. } => "NotPermitted",
            NoSuchCard(_) => "NoSuchCard",
            SoDViolation(_) => "SoDViolation",
            MissingSections(_) => "MissingSections",
            InvalidSection { .. } => "InvalidSection",
            UnknownSection { .. } => "UnknownSection",
            NoSuchRevision { .. } => "NoSuchRevision",
            NotDraft => "NotDraft",
            WrongStage { .. } => "WrongStage",
            ReviewAlreadyOpen(_) => "ReviewAlreadyOpen",
            UnknownReview(_) => "UnknownReview",
            ReviewNotOpen(_) => "ReviewNotOpen",
            UnknownItem(_) => "UnknownItem",
            MissingEvidence(_) => "MissingEvidence",
            MandatoryItemNotPassed(_) => "MandatoryItemNotPassed",
            EmptyRationale => "EmptyRationale",
            DuplicateApproval(_) => "DuplicateApproval",
            UnknownDeployment(_) => "UnknownDeployment",
            InactiveDeployment(_) => "InactiveDeployment",
            NonMonotonicTimestamp { .. } => "NonMonotonicTimestamp",
            InvalidMetric => "InvalidMetric",
            WrongPhase(_) => "WrongPhase",
            UnknownAlert(_) => "UnknownAlert",
            UnapprovedCardRevision { .. } => "UnapprovedCardRevision",
            IllegalTransition { .. } => "IllegalTransition",
            MissingApprovalRef => "MissingApprovalRef",
            InvalidApprovalRef(_) => "InvalidApprovalRef",
            InvalidCanaryFraction => "InvalidCanaryFraction",
            StorageFailure(_) => "StorageFailure",
            IncompleteDecisions(_) => "IncompleteDecisions",
            DigestMismatch { .. } => "DigestMismatch",
            RevisionDeleted { .. } => "RevisionDeleted",
            InvalidConfig(_) => "InvalidConfig",
        }
    }

    /// Coarse classification used for HTTP status mapping.
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            UnknownAsset(_)
            | UnknownReview(_)
            | UnknownItem(_)
            | UnknownDeployment(_)
            | UnknownAlert(_)
            | NoSuchCard(_)
            | NoSuchRevision { .. }
            | UnknownManifest(_) => ErrorKind::NotFound,
            NotResponsible { .. }
            | NotAccountable { .. }
            | NotAuthorized(_)
            | NotPermitted { .. }
            | SoDViolation(_)
            | UnknownPrincipal(_) => ErrorKind::Forbidden,
            EmptyName
            | EmptyReason
            | EmptyRationale
            | UnknownRole(_)
            | InvalidSection { .. }
            | UnknownSection { .. }
            | InvalidMetric
            | InvalidCanaryFraction
            | InvalidConfig(_) => ErrorKind::Invalid,
            StorageFailure(_) | DigestMismatch { .. } => ErrorKind::Internal,
            _ => ErrorKind::Conflict,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    NotFound,
    Forbidden,
    Invalid,
    Conflict,
    Internal,
}
