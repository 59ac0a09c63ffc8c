//! Governance engine for the lifecycle of AI assets in manufacturing.
//!
//! An asset moves through eleven stages in four phases (ideation,
//! development, operation, retirement). Quality gates at stages III, VII and
//! X block progress until an accountable principal, distinct from everyone
//! whose work is under review, approves a completed checklist. Every
//! mutation is recorded in a per-asset hash-chained audit ledger.

pub mod actions;
pub mod audit;
pub mod canonical;
pub mod cards;
pub mod config;
pub mod engine;
pub mod error;
pub mod gates;
pub mod ids;
pub mod lifecycle;
pub mod operation;
pub mod roles;
pub mod stage;
pub mod state;
pub mod store;
pub mod trace;

#[doc(hidden)]
pub mod testing;

pub use actions::Action;
pub use audit::{ArtifactRef, AuditEvent, ChainStatus, RetentionAction, RetentionDecision, RetirementManifest};
pub use cards::{AiCard, CardKind, CardStatus, RenderFormat};
pub use config::EngineConfig;
pub use engine::Engine;
pub use error::{Error, ErrorKind, Result};
pub use gates::{CheckResult, GateDecision, GateId, GateReview, GateStatus, Verdict};
pub use ids::{AssetId, PrincipalId};
pub use lifecycle::{Asset, AssetStatus, TransitionKind, TransitionRecord};
pub use operation::{Deployment, DeploymentState, DriftAlert, DriftRule, MetricPoint, ProposalTrigger};
pub use roles::{Principal, RoleId};
pub use stage::{Phase, StageId};
pub use state::{AssetState, Ctx};
pub use store::{FileStore, MemoryStore, Store};
pub use trace::TraceabilityReport;
