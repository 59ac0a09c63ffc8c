//! Command-line front end. Talks HTTP to a running server when `--server`
//! is given, otherwise runs the same router in-process against the
//! configured storage.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request};
use axum::Router;
use base64::Engine as _;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use tower::ServiceExt;

use stagegate_core::canonical::to_canonical;
use stagegate_core::{Engine, EngineConfig, FileStore, MemoryStore, Store};

use crate::api::{router, IDEMPOTENCY_HEADER, PRINCIPAL_HEADER};
use crate::config_file::{load_config, ConfigError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "stagegate", version, about = "Lifecycle governance for AI assets")]
pub struct Cli {
    /// Configuration file.
    #[arg(long, global = true, env = "STAGEGATE_CONFIG")]
    config: Option<PathBuf>,
    /// Base URL of a running server. Without it the command runs in-process.
    #[arg(long, global = true, env = "STAGEGATE_SERVER")]
    server: Option<String>,
    /// Acting principal.
    #[arg(long, global = true, env = "STAGEGATE_PRINCIPAL")]
    principal: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Sent as Idempotency-Key on mutating requests.
    #[arg(long, global = true)]
    idempotency_key: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Canonical,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP server.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
    #[command(subcommand)]
    Config(ConfigCmd),
    #[command(subcommand)]
    Asset(AssetCmd),
    #[command(subcommand)]
    Role(RoleCmd),
    #[command(subcommand)]
    Card(CardCmd),
    #[command(subcommand)]
    Evidence(EvidenceCmd),
    #[command(subcommand)]
    Gate(GateCmd),
    #[command(subcommand)]
    Deploy(DeployCmd),
    #[command(subcommand)]
    Metrics(MetricsCmd),
    #[command(subcommand)]
    Alerts(AlertsCmd),
    #[command(subcommand)]
    Update(UpdateCmd),
    #[command(subcommand)]
    Audit(AuditCmd),
    #[command(subcommand)]
    Trace(TraceCmd),
    /// Lifecycle board, or one asset's tile.
    Board {
        #[arg(long)]
        asset: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigCmd {
    /// Parse and validate a configuration file.
    Check { path: Option<PathBuf> },
}

#[derive(Debug, Subcommand)]
enum AssetCmd {
    Create {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        description: String,
        #[arg(long)]
        owner: Option<String>,
    },
    List,
    Show {
        #[arg(long = "asset")]
        asset_id: String,
    },
    /// Actions the acting principal may take now.
    Actions {
        #[arg(long = "asset")]
        asset_id: String,
    },
    Advance {
        #[arg(long = "asset")]
        asset_id: String,
    },
    Feedback {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long = "to")]
        target: String,
        #[arg(long)]
        reason: String,
    },
    /// Start retirement, or finish it with `--manifest`.
    Retire {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long, conflicts_with = "manifest")]
        reason: Option<String>,
        #[arg(long)]
        manifest: Option<String>,
    },
    /// Build the retirement manifest. Every artifact revision is retained
    /// unless named by `--archive` or `--delete` (`artifact_id` or
    /// `artifact_id@revision`).
    Manifest {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long)]
        policy: String,
        #[arg(long)]
        archive: Vec<String>,
        #[arg(long)]
        delete: Vec<String>,
    },
    Artifacts {
        #[arg(long = "asset")]
        asset_id: String,
    },
}

#[derive(Debug, Subcommand)]
enum RoleCmd {
    Bind {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long, value_name = "PRINCIPAL")]
        member: String,
        #[arg(long)]
        role: String,
    },
}

#[derive(Debug, Args)]
struct FieldArgs {
    /// `name=value`, repeatable.
    #[arg(long = "field", value_parser = parse_field)]
    fields: Vec<(String, String)>,
    /// JSON object of field values.
    #[arg(long)]
    fields_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum CardCmd {
    Create {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long)]
        kind: String,
        #[command(flatten)]
        fields: FieldArgs,
    },
    Revise {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long)]
        kind: String,
        #[command(flatten)]
        fields: FieldArgs,
    },
    Approve {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long)]
        kind: String,
        #[arg(long, default_value = "")]
        rationale: String,
    },
    /// One revision. `--render markdown|canonical` prints the rendered card.
    Show {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        rev: Option<u32>,
        #[arg(long)]
        render: Option<String>,
    },
    History {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long)]
        kind: String,
    },
}

#[derive(Debug, Subcommand)]
enum EvidenceCmd {
    Attach {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long)]
        description: String,
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long = "ref")]
        external_ref: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum GateCmd {
    Open {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long)]
        gate: String,
    },
    Check {
        #[arg(long = "review")]
        review_id: String,
        #[arg(long = "item")]
        item_id: String,
        /// pass, fail or not-applicable
        #[arg(long)]
        result: String,
        #[arg(long = "evidence")]
        evidence_refs: Vec<String>,
    },
    Decide {
        #[arg(long = "review")]
        review_id: String,
        /// approve or reject
        #[arg(long)]
        verdict: String,
        #[arg(long, default_value = "")]
        rationale: String,
    },
    Status {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long)]
        gate: String,
    },
}

#[derive(Debug, Subcommand)]
enum DeployCmd {
    Register {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long)]
        model_rev: Option<u32>,
        #[arg(long)]
        deployment_rev: Option<u32>,
    },
    Transition {
        #[arg(long = "deployment")]
        deployment_id: String,
        #[arg(long)]
        target: String,
        #[arg(long)]
        approval_ref: Option<String>,
        #[arg(long)]
        canary: Option<f64>,
    },
    List {
        #[arg(long = "asset")]
        asset_id: String,
    },
}

#[derive(Debug, Subcommand)]
enum MetricsCmd {
    /// Import a metrics file: one `asset,deployment,metric,value,timestamp`
    /// per line, or a JSON array when the file ends in `.json`.
    Ingest { file: PathBuf },
}

#[derive(Debug, Subcommand)]
enum AlertsCmd {
    List {
        #[arg(long = "asset")]
        asset_id: String,
    },
    /// Re-run drift rules over the stored windows.
    Evaluate {
        #[arg(long = "asset")]
        asset_id: String,
    },
}

#[derive(Debug, Subcommand)]
enum UpdateCmd {
    Propose {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long, conflicts_with = "note")]
        alert: Option<String>,
        #[arg(long)]
        note: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum AuditCmd {
    Show {
        #[arg(long = "asset")]
        asset_id: String,
        #[arg(long)]
        ndjson: bool,
    },
    /// Verify the hash chain of a stored asset, or of an exported file.
    Verify {
        #[arg(long = "asset")]
        asset_id: Option<String>,
        #[arg(long, conflicts_with = "asset_id")]
        file: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum TraceCmd {
    Report {
        #[arg(long = "asset")]
        asset_id: String,
    },
}

fn parse_field(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .ok_or_else(|| format!("expected name=value, got `{s}`"))
}

// ---------------------------------------------------------------------------
// transport

pub struct Reply {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

enum Transport {
    Remote {
        base: String,
        agent: ureq::Agent,
    },
    Local {
        router: Router,
        rt: tokio::runtime::Runtime,
    },
}

struct Client {
    transport: Transport,
    principal: Option<String>,
    idempotency_key: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Domain(format!("error[{}]: {e}", e.code()))
    }
}

impl Client {
    fn send(&self, method: Method, path: &str, content_type: &str, body: Vec<u8>) -> Result<Reply, Failure> {
        let mut b = Request::builder()
            .method(method.clone())
            .header("content-type", content_type);
        if let Some(p) = &self.principal {
            b = b.header(PRINCIPAL_HEADER, p);
        }
        if let Some(k) = self.idempotency_key.as_ref().filter(|_| method != Method::GET) {
            b = b.header(IDEMPOTENCY_HEADER, k);
        }
        match &self.transport {
            Transport::Remote { base, agent } => {
                let req = b
                    .uri(format!("{}{path}", base.trim_end_matches('/')))
                    .body(body)
                    .map_err(|e| Failure::Usage(e.to_string()))?;
                let mut resp = agent
                    .run(req)
                    .map_err(|e| Failure::Domain(format!("error[Transport]: {e}")))?;
                let status = resp.status().as_u16();
                let content_type = header_text(resp.headers(), "content-type");
                let body = resp
                    .body_mut()
                    .read_to_vec()
                    .map_err(|e| Failure::Domain(format!("error[Transport]: {e}")))?;
                Ok(Reply {
                    status,
                    content_type,
                    body,
                })
            }
            Transport::Local { router, rt } => {
                let req = b
                    .uri(path)
                    .body(Body::from(body))
                    .map_err(|e| Failure::Usage(e.to_string()))?;
                rt.block_on(async {
                    let resp = router.clone().oneshot(req).await.expect("router is infallible");
                    let status = resp.status().as_u16();
                    let content_type = header_text(resp.headers(), "content-type");
                    let body = to_bytes(resp.into_body(), usize::MAX)
                        .await
                        .map_err(|e| Failure::Domain(format!("error[Internal]: {e}")))?;
                    Ok(Reply {
                        status,
                        content_type,
                        body: body.to_vec(),
                    })
                })
            }
        }
    }

    fn get(&self, path: &str) -> Result<Reply, Failure> {
        self.send(Method::GET, path, "application/json", Vec::new())
    }

    fn post(&self, path: &str, body: Value) -> Result<Reply, Failure> {
        self.send(Method::POST, path, "application/json", body.to_string().into_bytes())
    }

    fn put(&self, path: &str, body: Value) -> Result<Reply, Failure> {
        self.send(Method::PUT, path, "application/json", body.to_string().into_bytes())
    }
}

fn header_text(h: &axum::http::HeaderMap, name: &str) -> String {
    h.get(name).and_then(|v| v.to_str().ok()).unwrap_or("").to_string()
}

fn open_engine(config: EngineConfig) -> Result<Engine, Failure> {
    let store: Arc<dyn Store> = match &config.storage_path {
        Some(dir) => Arc::new(FileStore::open(dir).map_err(|e| Failure::Domain(format!("error[{}]: {e}", e.code())))?),
        None => Arc::new(MemoryStore::new()),
    };
    Engine::open(config, store).map_err(|e| Failure::Domain(format!("error[{}]: {e}", e.code())))
}

fn read_config(path: Option<&Path>) -> Result<EngineConfig, Failure> {
    match path {
        Some(p) => Ok(load_config(p)?),
        None => {
            let mut c = EngineConfig::default();
            crate::config_file::apply_overrides(&mut c, |k| std::env::var(k).ok());
            Ok(c)
        }
    }
}

// ---------------------------------------------------------------------------
// entry point

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    run_with(args, &mut out, &mut err)
}

pub fn run_with<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(out, "{}", e.render());
                return EXIT_OK;
            }
            let _ = write!(err, "{}", e.render());
            return EXIT_USAGE;
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "usage error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Domain(m)) => {
            let _ = writeln!(err, "{m}");
            EXIT_DOMAIN
        }
    }
}

fn execute(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), Failure> {
    match &cli.command {
        Command::Serve { listen } => {
            let mut config = read_config(cli.config.as_deref())?;
            if let Some(l) = listen {
                config.listen_address = l.clone();
            }
            return crate::serve(config).map_err(|e| Failure::Domain(format!("error[BindFailure]: {e}")));
        }
        Command::Config(ConfigCmd::Check { path }) => {
            let path = path
                .as_deref()
                .or(cli.config.as_deref())
                .ok_or_else(|| Failure::Usage("no configuration file given".into()))?;
            let c = load_config(path)?;
            let _ = writeln!(
                out,
                "ok: {} principals, {} drift rules, gate quorum {}",
                c.principals.len(),
                c.drift_rules.len(),
                c.gates.quorum
            );
            return Ok(());
        }
        _ => {}
    }

    let transport = match &cli.server {
        Some(base) => {
            let config = ureq::config::Config::builder().http_status_as_error(false).build();
            Transport::Remote {
                base: base.clone(),
                agent: ureq::Agent::new_with_config(config),
            }
        }
        None => {
            let engine = open_engine(read_config(cli.config.as_deref())?)?;
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .map_err(|e| Failure::Domain(e.to_string()))?;
            Transport::Local {
                router: router(Arc::new(engine)),
                rt,
            }
        }
    };
    let client = Client {
        transport,
        principal: cli.principal.clone(),
        idempotency_key: cli.idempotency_key.clone(),
    };
    let reply = request(&client, &cli.command)?;
    emit(&reply, cli.format, out)
}

fn seg(s: &str) -> String {
    let mut o = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~:@".contains(&b) {
            o.push(b as char);
        } else {
            let _ = write!(o, "%{b:02X}");
        }
    }
    o
}

fn card_fields(f: &FieldArgs) -> Result<BTreeMap<String, String>, Failure> {
    let mut fields = match &f.fields_file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => BTreeMap::new(),
    };
    fields.extend(f.fields.iter().cloned());
    Ok(fields)
}

fn request(c: &Client, cmd: &Command) -> Result<Reply, Failure> {
    match cmd {
        Command::Serve { .. } | Command::Config(_) => unreachable!("handled before connecting"),
        Command::Asset(a) => match a {
            AssetCmd::Create {
                asset_id,
                name,
                description,
                owner,
            } => c.post(
                "/assets",
                json!({"asset_id": asset_id, "name": name, "description": description, "owner": owner}),
            ),
            AssetCmd::List => c.get("/assets"),
            AssetCmd::Show { asset_id } => c.get(&format!("/assets/{}", seg(asset_id))),
            AssetCmd::Actions { asset_id } => c.get(&format!("/assets/{}/actions", seg(asset_id))),
            AssetCmd::Advance { asset_id } => c.post(&format!("/assets/{}/advance", seg(asset_id)), json!({})),
            AssetCmd::Feedback {
                asset_id,
                target,
                reason,
            } => c.post(
                &format!("/assets/{}/feedback", seg(asset_id)),
                json!({"target": target, "reason": reason}),
            ),
            AssetCmd::Retire {
                asset_id,
                reason,
                manifest,
            } => {
                let body = match manifest {
                    Some(m) => json!({"manifest_id": m}),
                    None => json!({"reason": reason.clone().unwrap_or_default()}),
                };
                c.post(&format!("/assets/{}/retire", seg(asset_id)), body)
            }
            AssetCmd::Manifest {
                asset_id,
                policy,
                archive,
                delete,
            } => {
                let listing = c.get(&format!("/assets/{}/artifacts", seg(asset_id)))?;
                if listing.status >= 400 {
                    return Ok(listing);
                }
                let revs: Vec<Value> =
                    serde_json::from_slice(&listing.body).map_err(|e| Failure::Domain(e.to_string()))?;
                let named =
                    |list: &[String], id: &str, rev: u64| list.iter().any(|s| s == id || *s == format!("{id}@{rev}"));
                let decisions: Vec<Value> = revs
                    .iter()
                    .map(|r| {
                        let id = r["artifact_id"].as_str().unwrap_or_default();
                        let rev = r["revision"].as_u64().unwrap_or_default();
                        let action = if named(delete, id, rev) {
                            "Delete"
                        } else if named(archive, id, rev) {
                            "Archive"
                        } else {
                            "Retain"
                        };
                        json!({"artifact_id": id, "revision": rev, "retention_action": action, "policy_ref": policy})
                    })
                    .collect();
                c.post(
                    &format!("/assets/{}/retirement-manifest", seg(asset_id)),
                    json!({ "decisions": decisions }),
                )
            }
            AssetCmd::Artifacts { asset_id } => c.get(&format!("/assets/{}/artifacts", seg(asset_id))),
        },
        Command::Role(RoleCmd::Bind { asset_id, member, role }) => c.post(
            &format!("/assets/{}/roles", seg(asset_id)),
            json!({"principal": member, "role": role}),
        ),
        Command::Card(cc) => match cc {
            CardCmd::Create { asset_id, kind, fields } => c.post(
                &format!("/assets/{}/cards", seg(asset_id)),
                json!({"kind": kind, "fields": card_fields(fields)?}),
            ),
            CardCmd::Revise { asset_id, kind, fields } => c.put(
                &format!("/assets/{}/cards/{}", seg(asset_id), seg(kind)),
                json!({"fields": card_fields(fields)?}),
            ),
            CardCmd::Approve {
                asset_id,
                kind,
                rationale,
            } => c.post(
                &format!("/assets/{}/cards/{}/approve", seg(asset_id), seg(kind)),
                json!({ "rationale": rationale }),
            ),
            CardCmd::Show {
                asset_id,
                kind,
                rev,
                render,
            } => {
                let base = format!("/assets/{}/cards/{}", seg(asset_id), seg(kind));
                let rev = match rev {
                    Some(r) => *r,
                    None => {
                        let h = c.get(&base)?;
                        if h.status >= 400 {
                            return Ok(h);
                        }
                        let hist: Vec<Value> =
                            serde_json::from_slice(&h.body).map_err(|e| Failure::Domain(e.to_string()))?;
                        let last = hist
                            .last()
                            .ok_or_else(|| Failure::Domain(format!("no {kind} card yet")))?;
                        last["revision"].as_u64().unwrap_or(1) as u32
                    }
                };
                match render {
                    Some(f) => c.get(&format!("{base}/{rev}?format={}", seg(f))),
                    None => c.get(&format!("{base}/{rev}")),
                }
            }
            CardCmd::History { asset_id, kind } => c.get(&format!("/assets/{}/cards/{}", seg(asset_id), seg(kind))),
        },
        Command::Evidence(EvidenceCmd::Attach {
            asset_id,
            description,
            file,
            external_ref,
        }) => {
            let content = match file {
                Some(p) => Some(
                    base64::engine::general_purpose::STANDARD
                        .encode(std::fs::read(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?),
                ),
                None => None,
            };
            c.post(
                &format!("/assets/{}/evidence", seg(asset_id)),
                json!({"description": description, "content_base64": content, "external_ref": external_ref}),
            )
        }
        Command::Gate(g) => match g {
            GateCmd::Open { asset_id, gate } => c.post(
                &format!("/assets/{}/gates/{}/open", seg(asset_id), seg(gate)),
                json!({}),
            ),
            GateCmd::Check {
                review_id,
                item_id,
                result,
                evidence_refs,
            } => {
                let result: stagegate_core::CheckResult = result.parse().map_err(Failure::Usage)?;
                c.post(
                    &format!("/gates/{}/checks", seg(review_id)),
                    json!({"item_id": item_id, "result": result, "evidence_refs": evidence_refs}),
                )
            }
            GateCmd::Decide {
                review_id,
                verdict,
                rationale,
            } => {
                let verdict: stagegate_core::Verdict = verdict.parse().map_err(Failure::Usage)?;
                c.post(
                    &format!("/gates/{}/decision", seg(review_id)),
                    json!({"verdict": verdict, "rationale": rationale}),
                )
            }
            GateCmd::Status { asset_id, gate } => c.get(&format!("/assets/{}/gates/{}", seg(asset_id), seg(gate))),
        },
        Command::Deploy(d) => match d {
            DeployCmd::Register {
                asset_id,
                model_rev,
                deployment_rev,
            } => c.post(
                &format!("/assets/{}/deployments", seg(asset_id)),
                json!({"model_card_revision": model_rev, "deployment_card_revision": deployment_rev}),
            ),
            DeployCmd::Transition {
                deployment_id,
                target,
                approval_ref,
                canary,
            } => {
                let target: stagegate_core::DeploymentState = target.parse().map_err(Failure::Usage)?;
                c.post(
                    &format!("/deployments/{}/transition", seg(deployment_id)),
                    json!({"target": target, "approval_ref": approval_ref, "canary_fraction": canary}),
                )
            }
            DeployCmd::List { asset_id } => c.get(&format!("/assets/{}/deployments", seg(asset_id))),
        },
        Command::Metrics(MetricsCmd::Ingest { file }) => {
            let bytes = std::fs::read(file).map_err(|e| Failure::Usage(format!("{}: {e}", file.display())))?;
            let ct = if file.extension().is_some_and(|e| e == "json") {
                "application/json"
            } else {
                "text/plain"
            };
            c.send(Method::POST, "/metrics", ct, bytes)
        }
        Command::Alerts(a) => match a {
            AlertsCmd::List { asset_id } => c.get(&format!("/assets/{}/alerts", seg(asset_id))),
            AlertsCmd::Evaluate { asset_id } => c.post(&format!("/assets/{}/evaluate", seg(asset_id)), json!({})),
        },
        Command::Update(UpdateCmd::Propose { asset_id, alert, note }) => c.post(
            &format!("/assets/{}/proposals", seg(asset_id)),
            json!({"alert_id": alert, "note": note}),
        ),
        Command::Audit(a) => match a {
            AuditCmd::Show { asset_id, ndjson } => {
                let q = if *ndjson { "?format=ndjson" } else { "" };
                c.get(&format!("/assets/{}/audit{q}", seg(asset_id)))
            }
            AuditCmd::Verify { asset_id, file } => match (asset_id, file) {
                (Some(id), None) => c.get(&format!("/assets/{}/audit/verify", seg(id))),
                (None, Some(p)) => {
                    let text =
                        std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
                    let status = stagegate_core::audit::verify_export(&text);
                    Ok(Reply {
                        status: 200,
                        content_type: "application/json".into(),
                        body: serde_json::to_vec(&status).expect("chain status serializes"),
                    })
                }
                _ => Err(Failure::Usage("give an asset id or --file".into())),
            },
        },
        Command::Trace(TraceCmd::Report { asset_id }) => c.get(&format!("/assets/{}/traceability", seg(asset_id))),
        Command::Board { asset } => match asset {
            Some(id) => c.get(&format!("/assets/{}/board", seg(id))),
            None => c.get("/board"),
        },
    }
}

// ---------------------------------------------------------------------------
// output

fn emit(reply: &Reply, format: Format, out: &mut dyn std::io::Write) -> Result<(), Failure> {
    if reply.status >= 400 {
        let msg = match serde_json::from_slice::<Value>(&reply.body) {
            Ok(v) if v.get("code").is_some() => {
                let mut m = format!(
                    "error[{}]: {}",
                    v["code"].as_str().unwrap_or("?"),
                    v["message"].as_str().unwrap_or("")
                );
                if let Some(seq) = v.get("event_seq").and_then(Value::as_u64) {
                    let _ = write!(m, " (ledger head {seq})");
                }
                m
            }
            _ => format!("error[Http{}]: {}", reply.status, String::from_utf8_lossy(&reply.body)),
        };
        return Err(Failure::Domain(msg));
    }
    let io = |e: std::io::Error| Failure::Domain(e.to_string());
    if !reply.content_type.starts_with("application/json") {
        out.write_all(&reply.body).map_err(io)?;
        if !reply.body.ends_with(b"\n") {
            writeln!(out).map_err(io)?;
        }
        return Ok(());
    }
    let v: Value = serde_json::from_slice(&reply.body).map_err(|e| Failure::Domain(e.to_string()))?;
    let text = match format {
        Format::Json => serde_json::to_string_pretty(&v).expect("value serializes"),
        Format::Canonical => String::from_utf8(to_canonical(&v)).expect("canonical output is utf-8"),
        Format::Table => table(&v),
    };
    writeln!(out, "{}", text.trim_end()).map_err(io)
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Array(a) if a.iter().all(|x| !x.is_object() && !x.is_array()) => {
            a.iter().map(cell).collect::<Vec<_>>().join(", ")
        }
        Value::Array(a) if a.iter().all(|x| x.get("asset_id").is_some()) => {
            a.iter().map(|x| cell(&x["asset_id"])).collect::<Vec<_>>().join(", ")
        }
        Value::Array(a) => format!("[{} items]", a.len()),
        other => other.to_string(),
    }
}

/// Arrays of objects become aligned rows over their scalar columns; objects
/// become `key: value` lines, with nested row sets printed below.
pub fn table(v: &Value) -> String {
    match v {
        Value::Array(rows) if !rows.is_empty() && rows.iter().all(Value::is_object) => rows_table(rows),
        Value::Array(rows) if rows.is_empty() => "(none)".into(),
        Value::Object(map) => {
            let mut out = String::new();
            let mut nested = Vec::new();
            for (k, val) in map {
                match val {
                    Value::Array(rows) if !rows.is_empty() && rows.iter().all(Value::is_object) => {
                        nested.push((k, rows_table(rows)))
                    }
                    _ => {
                        let _ = writeln!(out, "{k}: {}", cell(val));
                    }
                }
            }
            for (k, t) in nested {
                let _ = writeln!(out, "\n{k}:\n{t}");
            }
            out
        }
        other => cell(other),
    }
}

fn rows_table(rows: &[Value]) -> String {
    let mut cols: Vec<&str> = Vec::new();
    for r in rows {
        for (k, v) in r.as_object().expect("rows are objects") {
            if !v.is_object() && !cols.contains(&k.as_str()) {
                cols.push(k);
            }
        }
    }
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| cols.iter().map(|c| cell(r.get(*c).unwrap_or(&Value::Null))).collect())
        .collect();
    let widths: Vec<usize> = cols
        .iter()
        .enumerate()
        .map(|(i, c)| {
            cells
                .iter()
                .map(|r| r[i].chars().count())
                .max()
                .unwrap_or(0)
                .max(c.len())
        })
        .collect();
    let line = |vals: Vec<&str>| {
        vals.iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(cols.clone());
    for r in &cells {
        out.push('\n');
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn path_segments_are_escaped() {
        assert_eq!(seg("asset-1:G1:2"), "asset-1:G1:2");
        assert_eq!(seg("a b/c"), "a%20b%2Fc");
    }

    #[test]
    fn table_renders_rows_and_objects() {
        let v = json!([{"a": 1, "b": "x"}, {"a": 22, "b": null}]);
        assert_eq!(table(&v), "a   b\n1   x\n22");
        assert_eq!(table(&json!({"status": "Ok"})).trim(), "status: Ok");
    }
}
