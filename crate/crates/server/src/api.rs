//! HTTP surface of the engine. Every handler runs the same in-process
//! operation a library caller would, so error codes are identical.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::request::Parts;
use axum::http::{HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use stagegate_core::audit::{export_ndjson, ArtifactRevision, RetentionDecision};
use stagegate_core::gates::{review_asset, CheckResult, GateStatus};
use stagegate_core::operation::{deployment_asset, parse_metric_lines, AlertStatus, MetricPoint};
use stagegate_core::stage::Phase;
use stagegate_core::{
    AssetId, AssetState, CardKind, Ctx, DeploymentState, Engine, Error, ErrorKind, GateDecision, GateId, PrincipalId,
    ProposalTrigger, RenderFormat, StageId, Verdict,
};

pub const PRINCIPAL_HEADER: &str = "x-principal";
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
pub const EVENT_SEQ_HEADER: &str = "x-event-seq";
const BODY_LIMIT: usize = 16 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    replay: Arc<ReplayCache>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>) -> Self {
        AppState {
            engine,
            replay: Arc::default(),
        }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }
}

pub fn router(engine: Arc<Engine>) -> Router {
    let state = AppState::new(engine);
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/board", get(board))
        .route("/assets", get(list_assets).post(create_asset))
        .route("/assets/{id}", get(show_asset))
        .route("/assets/{id}/actions", get(allowed_actions))
        .route("/assets/{id}/advance", post(advance))
        .route("/assets/{id}/feedback", post(feedback))
        .route("/assets/{id}/retire", post(retire))
        .route("/assets/{id}/retirement-manifest", post(build_manifest))
        .route("/assets/{id}/artifacts", get(list_artifacts))
        .route("/assets/{id}/roles", post(bind_role))
        .route("/assets/{id}/cards", post(create_card))
        .route("/assets/{id}/cards/{kind}", get(card_history).put(revise_card))
        .route("/assets/{id}/cards/{kind}/approve", post(approve_card))
        .route("/assets/{id}/cards/{kind}/{rev}", get(show_card))
        .route("/assets/{id}/evidence", post(attach_evidence))
        .route("/assets/{id}/gates/{gate}", get(gate_status))
        .route("/assets/{id}/gates/{gate}/open", post(open_gate))
        .route("/gates/{review}/checks", post(record_check))
        .route("/gates/{review}/decision", post(decide_gate))
        .route(
            "/assets/{id}/deployments",
            get(list_deployments).post(register_deployment),
        )
        .route("/deployments/{id}/transition", post(transition_deployment))
        .route("/metrics", post(ingest_metrics))
        .route("/assets/{id}/evaluate", post(evaluate_rules))
        .route("/assets/{id}/alerts", get(list_alerts))
        .route("/assets/{id}/proposals", get(list_proposals).post(open_proposal))
        .route("/assets/{id}/audit", get(audit))
        .route("/assets/{id}/audit/verify", get(verify_audit))
        .route("/assets/{id}/traceability", get(traceability))
        .route("/assets/{id}/board", get(asset_board))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NoSuchEndpoint", "no such endpoint") })
        .layer(middleware::from_fn_with_state(state.clone(), idempotency))
        .with_state(state)
}

// ---------------------------------------------------------------------------
// errors

/// Error body: `{code, message, event_seq}`. `event_seq` is the asset's
/// ledger head at the time of the rejection, when an asset is involved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_seq: Option<u64>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
            event_seq: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }

    fn from_engine(engine: &Engine, asset: Option<&AssetId>, e: Error) -> Self {
        let mut out = ApiError::new(status_for(&e), e.code(), e.to_string());
        out.event_seq = asset.and_then(|id| engine.read(id, |st, _| st.ledger.len() as u64).ok());
        out
    }
}

pub fn status_for(e: &Error) -> StatusCode {
    match e.kind() {
        ErrorKind::NotFound => StatusCode::NOT_FOUND,
        ErrorKind::Forbidden => StatusCode::FORBIDDEN,
        ErrorKind::Invalid => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorKind::Conflict => StatusCode::CONFLICT,
        ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn json_response<T: Serialize>(status: StatusCode, value: &T, seq: Option<u64>) -> Response {
    let mut resp = (status, Json(value)).into_response();
    if let Some(seq) = seq {
        resp.headers_mut().insert(EVENT_SEQ_HEADER, HeaderValue::from(seq));
    }
    resp
}

fn text_response(content_type: &'static str, body: impl Into<Body>) -> Response {
    let mut resp = Response::new(body.into());
    resp.headers_mut()
        .insert(CONTENT_TYPE, HeaderValue::from_static(content_type));
    resp
}

// ---------------------------------------------------------------------------
// extractors

/// The acting principal, named by the `X-Principal` header of a trusted
/// reverse proxy.
pub struct Actor(pub PrincipalId);

impl<S: Send + Sync> FromRequestParts<S> for Actor {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        match MaybeActor::from_request_parts(parts, &()).await? {
            MaybeActor(Some(p)) => Ok(Actor(p)),
            MaybeActor(None) => Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "MissingPrincipal",
                "the X-Principal header is required",
            )),
        }
    }
}

pub struct MaybeActor(pub Option<PrincipalId>);

impl<S: Send + Sync> FromRequestParts<S> for MaybeActor {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        let Some(v) = parts.headers.get(PRINCIPAL_HEADER) else {
            return Ok(MaybeActor(None));
        };
        let s = v
            .to_str()
            .map_err(|_| ApiError::bad_request("X-Principal is not valid text"))?
            .trim();
        Ok(MaybeActor((!s.is_empty()).then(|| PrincipalId::from(s))))
    }
}

/// JSON body whose rejections use the API error shape.
pub struct ApiJson<T>(pub T);

impl<T: serde::de::DeserializeOwned, S: Send + Sync> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let body: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) {
            b"{}"
        } else {
            &bytes
        };
        serde_json::from_slice(body)
            .map(ApiJson)
            .map_err(|e| ApiError::bad_request(format!("request body: {e}")))
    }
}

fn parse_path<T: std::str::FromStr>(what: &str, s: &str) -> Result<T, ApiError>
where
    T::Err: std::fmt::Display,
{
    s.parse()
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "BadPath", format!("{what} `{s}`: {e}")))
}

// ---------------------------------------------------------------------------
// engine access

async fn blocking<F>(s: &AppState, f: F) -> ApiResult
where
    F: FnOnce(&Engine) -> ApiResult + Send + 'static,
{
    let engine = s.engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn mutate<T, F>(s: &AppState, id: AssetId, f: F) -> ApiResult
where
    T: Serialize + Send + 'static,
    F: FnOnce(&mut AssetState, &Ctx) -> stagegate_core::Result<T> + Send + 'static,
{
    blocking(s, move |e| {
        let res = e.mutate(&id, |st, cx| {
            let v = f(st, cx)?;
            Ok((v, st.ledger.len() as u64))
        });
        match res {
            Ok((v, seq)) => Ok(json_response(StatusCode::OK, &v, Some(seq))),
            Err(err) => Err(ApiError::from_engine(e, Some(&id), err)),
        }
    })
    .await
}

async fn read<F>(s: &AppState, id: AssetId, f: F) -> ApiResult
where
    F: FnOnce(&AssetState, &Ctx) -> ApiResult + Send + 'static,
{
    blocking(s, move |e| {
        e.read(&id, f).map_err(|err| ApiError::from_engine(e, None, err))?
    })
    .await
}

fn core_err(e: Error) -> ApiError {
    ApiError::new(status_for(&e), e.code(), e.to_string())
}

// ---------------------------------------------------------------------------
// idempotency

/// Responses to mutating requests that carried an `Idempotency-Key`, keyed by
/// principal, method, path and key. Requests sharing a key run one at a time.
#[derive(Default)]
pub struct ReplayCache {
    entries: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Option<Cached>>>>>,
}

struct Cached {
    body_hash: [u8; 32],
    status: StatusCode,
    headers: HeaderMap,
    body: Bytes,
}

impl Cached {
    fn replay(&self) -> Response {
        let mut resp = Response::new(Body::from(self.body.clone()));
        *resp.status_mut() = self.status;
        *resp.headers_mut() = self.headers.clone();
        resp.headers_mut()
            .insert("idempotent-replay", HeaderValue::from_static("true"));
        resp
    }
}

async fn idempotency(State(s): State<AppState>, req: Request, next: Next) -> Response {
    if !matches!(*req.method(), Method::POST | Method::PUT) {
        return next.run(req).await;
    }
    let Some(key) = req.headers().get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()) else {
        return next.run(req).await;
    };
    let principal = req
        .headers()
        .get(PRINCIPAL_HEADER)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("");
    let slot_key = format!("{principal}\n{}\n{}\n{key}", req.method(), req.uri().path());
    let (parts, body) = req.into_parts();
    let bytes = match to_bytes(body, BODY_LIMIT).await {
        Ok(b) => b,
        Err(e) => return ApiError::bad_request(e.to_string()).into_response(),
    };
    let body_hash = stagegate_core::canonical::Digest::of(&bytes).0;
    let slot = s
        .replay
        .entries
        .lock()
        .expect("replay cache lock")
        .entry(slot_key)
        .or_default()
        .clone();
    let mut guard = slot.lock().await;
    if let Some(c) = guard.as_ref() {
        if c.body_hash != body_hash {
            return ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "IdempotencyKeyReuse",
                "idempotency key was already used with a different request body",
            )
            .into_response();
        }
        return c.replay();
    }
    let resp = next.run(Request::from_parts(parts, Body::from(bytes))).await;
    if resp.status().is_server_error() {
        return resp;
    }
    let (rparts, rbody) = resp.into_parts();
    let rbytes = match to_bytes(rbody, BODY_LIMIT).await {
        Ok(b) => b,
        Err(e) => return ApiError::internal(e.to_string()).into_response(),
    };
    let cached = Cached {
        body_hash,
        status: rparts.status,
        headers: rparts.headers.clone(),
        body: rbytes.clone(),
    };
    *guard = Some(cached);
    Response::from_parts(rparts, Body::from(rbytes))
}

// ---------------------------------------------------------------------------
// views

#[derive(Serialize)]
struct CardSummary {
    kind: CardKind,
    latest_revision: u32,
    latest_status: stagegate_core::CardStatus,
    approved_revision: Option<u32>,
}

#[derive(Serialize)]
struct AssetView<'a> {
    asset: &'a stagegate_core::Asset,
    phase: Phase,
    stage_name: &'a str,
    bindings: &'a [stagegate_core::roles::RoleBinding],
    transitions: &'a [stagegate_core::TransitionRecord],
    cards: Vec<CardSummary>,
    gates: Vec<GateStatus>,
    deployments: &'a [stagegate_core::Deployment],
    open_alerts: usize,
    manifests: &'a [stagegate_core::RetirementManifest],
    evidence: Vec<&'a stagegate_core::gates::Evidence>,
    ledger_head: u64,
    allowed_actions: Vec<stagegate_core::Action>,
}

fn asset_view<'a>(st: &'a AssetState, cx: &'a Ctx, who: Option<&PrincipalId>) -> AssetView<'a> {
    AssetView {
        asset: &st.asset,
        phase: st.asset.phase(),
        stage_name: cx.config.stage_name(st.asset.current_stage),
        bindings: &st.bindings,
        transitions: &st.transitions,
        cards: st
            .cards
            .iter()
            .filter_map(|(k, h)| {
                let last = h.last()?;
                Some(CardSummary {
                    kind: *k,
                    latest_revision: last.revision,
                    latest_status: last.status,
                    approved_revision: st.approved_card(*k).map(|c| c.revision),
                })
            })
            .collect(),
        gates: GateId::ALL.iter().map(|g| st.gate_status(*g)).collect(),
        deployments: &st.deployments,
        open_alerts: open_alerts(st),
        manifests: &st.manifests,
        evidence: st.evidence.values().collect(),
        ledger_head: st.ledger.len() as u64,
        allowed_actions: st.allowed_actions(cx, who),
    }
}

fn open_alerts(st: &AssetState) -> usize {
    st.alerts
        .iter()
        .filter(|a| a.status != AlertStatus::ClosedByUpdate)
        .count()
}

/// One asset tile of the lifecycle board.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoardTile {
    pub asset_id: AssetId,
    pub name: String,
    pub stage: StageId,
    pub stage_name: String,
    pub phase: Phase,
    pub phase_color: String,
    pub status: stagegate_core::AssetStatus,
    pub update_cycle: u32,
    pub gates: Vec<GateBadge>,
    pub open_alerts: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateBadge {
    pub gate: GateId,
    pub stage: StageId,
    pub color: String,
    pub state: String,
}

pub const GATE_COLOR: &str = "yellow";

fn badge(status: &GateStatus) -> GateBadge {
    let (gate, state) = match status {
        GateStatus::NeverOpened { gate } => (*gate, "not opened"),
        GateStatus::Reviewed { gate, decision, .. } => (
            *gate,
            match decision {
                GateDecision::Open => "open",
                GateDecision::Approved => "approved",
                GateDecision::Rejected => "rejected",
                GateDecision::RequiresReapproval => "re-approval",
            },
        ),
    };
    GateBadge {
        gate,
        stage: gate.stage(),
        color: GATE_COLOR.into(),
        state: state.into(),
    }
}

fn tile(st: &AssetState, cx: &Ctx) -> BoardTile {
    let stage = st.asset.current_stage;
    BoardTile {
        asset_id: st.asset.asset_id.clone(),
        name: st.asset.name.clone(),
        stage,
        stage_name: cx.config.stage_name(stage).to_string(),
        phase: stage.phase(),
        phase_color: stage.phase().display_color().into(),
        status: st.asset.status,
        update_cycle: st.asset.update_cycle,
        gates: GateId::ALL.iter().map(|g| badge(&st.gate_status(*g))).collect(),
        open_alerts: open_alerts(st),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoardColumn {
    pub stage: StageId,
    pub name: String,
    pub phase: Phase,
    pub color: String,
    pub gate: Option<GateId>,
    pub assets: Vec<BoardTile>,
}

async fn board(State(s): State<AppState>) -> ApiResult {
    blocking(&s, |e| {
        let config = e.config();
        let mut columns: Vec<BoardColumn> = StageId::all()
            .map(|stage| BoardColumn {
                stage,
                name: config.stage_name(stage).to_string(),
                phase: stage.phase(),
                color: stage.phase().display_color().into(),
                gate: GateId::at_stage(stage),
                assets: Vec::new(),
            })
            .collect();
        for id in e.asset_ids() {
            let t = e.read(&id, tile).map_err(core_err)?;
            columns[t.stage.ordinal() as usize - 1].assets.push(t);
        }
        Ok(json_response(StatusCode::OK, &columns, None))
    })
    .await
}

async fn asset_board(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    read(&s, id.into(), |st, cx| {
        Ok(json_response(StatusCode::OK, &tile(st, cx), None))
    })
    .await
}

// ---------------------------------------------------------------------------
// assets and lifecycle

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateAsset {
    asset_id: AssetId,
    name: String,
    #[serde(default)]
    description: String,
    owner: Option<PrincipalId>,
}

async fn create_asset(State(s): State<AppState>, Actor(actor): Actor, ApiJson(req): ApiJson<CreateAsset>) -> ApiResult {
    blocking(&s, move |e| {
        let owner = req.owner.unwrap_or(actor);
        let asset = e
            .create_asset(req.asset_id, &req.name, &req.description, &owner)
            .map_err(core_err)?;
        Ok(json_response(StatusCode::CREATED, &asset, Some(1)))
    })
    .await
}

async fn list_assets(State(s): State<AppState>) -> ApiResult {
    blocking(&s, |e| Ok(json_response(StatusCode::OK, &e.list_assets(), None))).await
}

async fn show_asset(State(s): State<AppState>, MaybeActor(who): MaybeActor, Path(id): Path<String>) -> ApiResult {
    read(&s, id.into(), move |st, cx| {
        Ok(json_response(StatusCode::OK, &asset_view(st, cx, who.as_ref()), None))
    })
    .await
}

async fn allowed_actions(State(s): State<AppState>, MaybeActor(who): MaybeActor, Path(id): Path<String>) -> ApiResult {
    read(&s, id.into(), move |st, cx| {
        Ok(json_response(
            StatusCode::OK,
            &st.allowed_actions(cx, who.as_ref()),
            None,
        ))
    })
    .await
}

async fn advance(State(s): State<AppState>, Actor(actor): Actor, Path(id): Path<String>) -> ApiResult {
    mutate(&s, id.into(), move |st, cx| st.advance(cx, &actor)).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackReq {
    target: StageId,
    reason: String,
}

async fn feedback(
    State(s): State<AppState>,
    Actor(actor): Actor,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<FeedbackReq>,
) -> ApiResult {
    mutate(&s, id.into(), move |st, cx| {
        st.feedback(cx, req.target, &actor, &req.reason)
    })
    .await
}

/// `{"reason": ...}` initiates retirement; `{"manifest_id": ...}` completes it.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RetireReq {
    reason: Option<String>,
    manifest_id: Option<String>,
}

async fn retire(
    State(s): State<AppState>,
    Actor(actor): Actor,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<RetireReq>,
) -> ApiResult {
    match (req.reason, req.manifest_id) {
        (None, Some(m)) => mutate(&s, id.into(), move |st, cx| st.complete_retirement(cx, &m, &actor)).await,
        (reason, None) => {
            let reason = reason.unwrap_or_default();
            mutate(&s, id.into(), move |st, cx| st.initiate_retirement(cx, &actor, &reason)).await
        }
        (Some(_), Some(_)) => Err(ApiError::bad_request("give either reason or manifest_id, not both")),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestReq {
    decisions: Vec<RetentionDecision>,
}

async fn build_manifest(
    State(s): State<AppState>,
    Actor(actor): Actor,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<ManifestReq>,
) -> ApiResult {
    mutate(&s, id.into(), move |st, cx| {
        st.build_retirement_manifest(cx, &actor, &req.decisions)
    })
    .await
}

async fn list_artifacts(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    read(&s, id.into(), |st, _| {
        let revs: Vec<&ArtifactRevision> = st.artifacts.all_revisions().collect();
        Ok(json_response(StatusCode::OK, &revs, None))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BindReq {
    principal: PrincipalId,
    role: String,
}

async fn bind_role(
    State(s): State<AppState>,
    Actor(actor): Actor,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<BindReq>,
) -> ApiResult {
    mutate(&s, id.into(), move |st, cx| {
        st.bind_role(cx, &req.principal, &req.role, &actor)
    })
    .await
}

// ---------------------------------------------------------------------------
// cards

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateCardReq {
    kind: CardKind,
    #[serde(default)]
    fields: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReviseCardReq {
    #[serde(default)]
    fields: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RationaleReq {
    #[serde(default)]
    rationale: String,
}

async fn create_card(
    State(s): State<AppState>,
    Actor(actor): Actor,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<CreateCardReq>,
) -> ApiResult {
    mutate(&s, id.into(), move |st, cx| {
        st.create_card(cx, req.kind, &actor, req.fields)
    })
    .await
}

async fn revise_card(
    State(s): State<AppState>,
    Actor(actor): Actor,
    Path((id, kind)): Path<(String, String)>,
    ApiJson(req): ApiJson<ReviseCardReq>,
) -> ApiResult {
    let kind: CardKind = parse_path("card kind", &kind)?;
    mutate(&s, id.into(), move |st, cx| {
        st.revise_card(cx, kind, &actor, req.fields)
    })
    .await
}

async fn approve_card(
    State(s): State<AppState>,
    Actor(actor): Actor,
    Path((id, kind)): Path<(String, String)>,
    ApiJson(req): ApiJson<RationaleReq>,
) -> ApiResult {
    let kind: CardKind = parse_path("card kind", &kind)?;
    mutate(&s, id.into(), move |st, cx| {
        st.approve_card(cx, kind, &actor, &req.rationale)
    })
    .await
}

async fn card_history(State(s): State<AppState>, Path((id, kind)): Path<(String, String)>) -> ApiResult {
    let kind: CardKind = parse_path("card kind", &kind)?;
    read(&s, id.into(), move |st, _| {
        Ok(json_response(StatusCode::OK, &st.card_history(kind), None))
    })
    .await
}

/// `?format=markdown` or `?format=canonical` renders the card; the default
/// is the stored record as JSON.
async fn show_card(
    State(s): State<AppState>,
    Path((id, kind, rev)): Path<(String, String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let kind: CardKind = parse_path("card kind", &kind)?;
    let rev: u32 = parse_path("revision", &rev)?;
    let format = match q.get("format").map(String::as_str) {
        None | Some("json") => None,
        Some(f) => Some(f.parse::<RenderFormat>().map_err(ApiError::bad_request)?),
    };
    read(&s, id.into(), move |st, cx| match format {
        None => Ok(json_response(
            StatusCode::OK,
            st.card_revision(kind, rev).map_err(core_err)?,
            None,
        )),
        Some(f) => {
            let bytes = st.render_card(cx, kind, rev, f).map_err(core_err)?;
            let ct = match f {
                RenderFormat::Markdown => "text/markdown; charset=utf-8",
                RenderFormat::Canonical => "application/json",
            };
            Ok(text_response(ct, bytes))
        }
    })
    .await
}

// ---------------------------------------------------------------------------
// gates and evidence

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvidenceReq {
    description: String,
    content_base64: Option<String>,
    external_ref: Option<String>,
}

async fn attach_evidence(
    State(s): State<AppState>,
    Actor(actor): Actor,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<EvidenceReq>,
) -> ApiResult {
    let payload = req
        .content_base64
        .map(|b| base64::engine::general_purpose::STANDARD.decode(b.as_bytes()))
        .transpose()
        .map_err(|e| ApiError::bad_request(format!("content_base64: {e}")))?;
    mutate(&s, id.into(), move |st, cx| {
        st.attach_evidence(cx, &actor, &req.description, payload, req.external_ref.as_deref())
    })
    .await
}

async fn open_gate(
    State(s): State<AppState>,
    Actor(actor): Actor,
    Path((id, gate)): Path<(String, String)>,
) -> ApiResult {
    let gate: GateId = parse_path("gate", &gate)?;
    mutate(&s, id.into(), move |st, cx| st.open_gate_review(cx, gate, &actor)).await
}

#[derive(Serialize)]
struct GateView<'a> {
    status: GateStatus,
    reviews: Vec<&'a stagegate_core::GateReview>,
}

async fn gate_status(State(s): State<AppState>, Path((id, gate)): Path<(String, String)>) -> ApiResult {
    let gate: GateId = parse_path("gate", &gate)?;
    read(&s, id.into(), move |st, _| {
        let view = GateView {
            status: st.gate_status(gate),
            reviews: st.reviews.iter().filter(|r| r.gate == gate).collect(),
        };
        Ok(json_response(StatusCode::OK, &view, None))
    })
    .await
}

fn review_owner(review_id: &str) -> Result<AssetId, ApiError> {
    review_asset(review_id).ok_or_else(|| core_err(Error::UnknownReview(review_id.to_string())))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckReq {
    item_id: String,
    result: CheckResult,
    #[serde(default)]
    evidence_refs: Vec<String>,
}

async fn record_check(
    State(s): State<AppState>,
    Actor(actor): Actor,
    Path(review): Path<String>,
    ApiJson(req): ApiJson<CheckReq>,
) -> ApiResult {
    let asset = review_owner(&review)?;
    mutate(&s, asset, move |st, cx| {
        st.record_check(cx, &review, &req.item_id, req.result, &req.evidence_refs, &actor)
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionReq {
    verdict: Verdict,
    #[serde(default)]
    rationale: String,
}

async fn decide_gate(
    State(s): State<AppState>,
    Actor(actor): Actor,
    Path(review): Path<String>,
    ApiJson(req): ApiJson<DecisionReq>,
) -> ApiResult {
    let asset = review_owner(&review)?;
    mutate(&s, asset, move |st, cx| {
        st.decide_gate(cx, &review, &actor, req.verdict, &req.rationale)
    })
    .await
}

// ---------------------------------------------------------------------------
// operation

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterReq {
    /// Defaults to the approved revision of the Model card.
    model_card_revision: Option<u32>,
    deployment_card_revision: Option<u32>,
}

async fn register_deployment(
    State(s): State<AppState>,
    Actor(actor): Actor,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<RegisterReq>,
) -> ApiResult {
    mutate(&s, id.into(), move |st, cx| {
        let model = match req.model_card_revision {
            Some(r) => r,
            None => {
                st.approved_card(CardKind::Model)
                    .ok_or(Error::MissingOrUnapprovedCard(CardKind::Model))?
                    .revision
            }
        };
        st.register_deployment(cx, model, req.deployment_card_revision, &actor)
    })
    .await
}

async fn list_deployments(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    read(&s, id.into(), |st, _| {
        Ok(json_response(StatusCode::OK, &st.deployments, None))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionReq {
    target: DeploymentState,
    approval_ref: Option<String>,
    canary_fraction: Option<f64>,
}

async fn transition_deployment(
    State(s): State<AppState>,
    Actor(actor): Actor,
    Path(dep): Path<String>,
    ApiJson(req): ApiJson<TransitionReq>,
) -> ApiResult {
    let asset = deployment_asset(&dep).ok_or_else(|| core_err(Error::UnknownDeployment(dep.clone())))?;
    mutate(&s, asset, move |st, cx| {
        st.transition_deployment(
            cx,
            &dep,
            req.target,
            &actor,
            req.approval_ref.as_deref(),
            req.canary_fraction,
        )
    })
    .await
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MetricsBody {
    Wrapped { points: Vec<MetricPoint> },
    Bare(Vec<MetricPoint>),
}

/// Accepts `{"points": [...]}` or a bare JSON array; `text/plain` and
/// `text/csv` bodies use the line format of the backfill import.
async fn ingest_metrics(State(s): State<AppState>, Actor(actor): Actor, headers: HeaderMap, body: Bytes) -> ApiResult {
    let ct = headers.get(CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or("");
    let points = if ct.starts_with("text/") {
        let text = std::str::from_utf8(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
        parse_metric_lines(text).map_err(|(line, msg)| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "InvalidMetric",
                format!("line {line}: {msg}"),
            )
        })?
    } else {
        match serde_json::from_slice::<MetricsBody>(&body) {
            Ok(MetricsBody::Wrapped { points } | MetricsBody::Bare(points)) => points,
            Err(e) => return Err(ApiError::bad_request(format!("request body: {e}"))),
        }
    };
    blocking(&s, move |e| {
        let out = e
            .ingest_metrics(&actor, &points)
            .map_err(|err| ApiError::from_engine(e, points.first().map(|p| &p.asset_id), err))?;
        Ok(json_response(StatusCode::OK, &out, None))
    })
    .await
}

async fn evaluate_rules(State(s): State<AppState>, Actor(actor): Actor, Path(id): Path<String>) -> ApiResult {
    mutate(&s, id.into(), move |st, cx| st.evaluate_rules(cx, &actor)).await
}

async fn list_alerts(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    read(&s, id.into(), |st, _| {
        Ok(json_response(StatusCode::OK, &st.alerts, None))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalReq {
    alert_id: Option<String>,
    note: Option<String>,
}

async fn open_proposal(
    State(s): State<AppState>,
    Actor(actor): Actor,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<ProposalReq>,
) -> ApiResult {
    let trigger = match (req.alert_id, req.note) {
        (Some(alert_id), None) => ProposalTrigger::Alert { alert_id },
        (None, note) => ProposalTrigger::Manual {
            note: note.unwrap_or_default(),
        },
        (Some(_), Some(_)) => return Err(ApiError::bad_request("give either alert_id or note, not both")),
    };
    mutate(&s, id.into(), move |st, cx| {
        st.open_update_proposal(cx, trigger, &actor)
    })
    .await
}

async fn list_proposals(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    read(&s, id.into(), |st, _| {
        Ok(json_response(StatusCode::OK, &st.proposals, None))
    })
    .await
}

// ---------------------------------------------------------------------------
// audit and traceability

/// JSON array of events by default; `?format=ndjson` gives the canonical
/// export that `audit verify` style tooling re-checks offline.
async fn audit(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let ndjson = q.get("format").is_some_and(|f| f == "ndjson");
    read(&s, id.into(), move |st, _| {
        if ndjson {
            Ok(text_response("application/x-ndjson", export_ndjson(st.ledger.events())))
        } else {
            Ok(json_response(StatusCode::OK, &st.ledger.events(), None))
        }
    })
    .await
}

async fn verify_audit(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    read(&s, id.into(), |st, _| {
        Ok(json_response(StatusCode::OK, &st.verify_chain(), None))
    })
    .await
}

async fn traceability(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    read(&s, id.into(), |st, _| {
        Ok(json_response(StatusCode::OK, &st.traceability_report(), None))
    })
    .await
}
