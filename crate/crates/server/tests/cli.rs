use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::Value;

use stagegate_core::testing::*;
use stagegate_core::{CardKind, Engine, GateId, MemoryStore};
use stagegate_server::cli::{run_with, EXIT_DOMAIN, EXIT_OK, EXIT_USAGE};

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(config: &Path, principal: &str, args: &[&str]) -> Out {
    let mut argv = vec![
        "stagegate".to_string(),
        "--config".into(),
        config.display().to_string(),
        "--principal".into(),
        principal.into(),
    ];
    argv.extend(args.iter().map(|s| s.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(argv, &mut out, &mut err);
    Out {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn ok(o: Out) -> Out {
    assert_eq!(o.code, EXIT_OK, "stdout: {}\nstderr: {}", o.stdout, o.stderr);
    o
}

/// Config file with the test principals and file storage under `dir`.
fn write_config(dir: &Path) -> PathBuf {
    let mut c = TestConfig::new().config;
    c.storage_path = Some(dir.join("state"));
    let path = dir.join("engine.toml");
    std::fs::write(&path, toml::to_string(&c).unwrap()).unwrap();
    path
}

/// Asset at stage III with a UseCase card written by WORKER, all through the CLI.
fn asset_with_use_case(cfg: &Path) {
    let f = TestConfig::new();
    ok(run(
        cfg,
        OWNER,
        &["asset", "create", "--asset", ASSET, "--name", "weld seam check"],
    ));
    for r in f.responsible_roles() {
        ok(run(
            cfg,
            OWNER,
            &[
                "role",
                "bind",
                "--asset",
                ASSET,
                "--member",
                WORKER,
                "--role",
                r.as_str(),
            ],
        ));
    }
    for r in f.accountable_roles() {
        ok(run(
            cfg,
            OWNER,
            &[
                "role",
                "bind",
                "--asset",
                ASSET,
                "--member",
                APPROVER,
                "--role",
                r.as_str(),
            ],
        ));
    }
    ok(run(cfg, WORKER, &["asset", "advance", "--asset", ASSET]));
    ok(run(cfg, WORKER, &["asset", "advance", "--asset", ASSET]));
    let fields: Vec<String> = full_fields(CardKind::UseCase)
        .into_iter()
        .flat_map(|(k, v)| ["--field".to_string(), format!("{k}={v}")])
        .collect();
    let mut args = vec!["card", "create", "--asset", ASSET, "--kind", "UseCase"];
    args.extend(fields.iter().map(String::as_str));
    ok(run(cfg, WORKER, &args));
}

#[test]
fn self_approval_exits_with_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    asset_with_use_case(&cfg);

    let o = run(
        &cfg,
        WORKER,
        &[
            "card",
            "approve",
            "--asset",
            ASSET,
            "--kind",
            "UseCase",
            "--rationale",
            "mine",
        ],
    );
    assert_eq!(o.code, EXIT_DOMAIN, "{}", o.stderr);
    assert!(o.stderr.contains("SoDViolation"), "{}", o.stderr);

    ok(run(
        &cfg,
        APPROVER,
        &[
            "card",
            "approve",
            "--asset",
            ASSET,
            "--kind",
            "UseCase",
            "--rationale",
            "complete",
        ],
    ));
    let md = ok(run(
        &cfg,
        WORKER,
        &[
            "card", "show", "--asset", ASSET, "--kind", "UseCase", "--render", "markdown",
        ],
    ));
    assert!(md.stdout.starts_with("# UseCase card"), "{}", md.stdout);
}

#[test]
fn audit_verify_and_trace_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    asset_with_use_case(&cfg);

    let o = ok(run(&cfg, WORKER, &["audit", "verify", "--asset", ASSET]));
    assert!(o.stdout.contains("Ok"), "{}", o.stdout);

    let o = ok(run(
        &cfg,
        WORKER,
        &["trace", "report", "--asset", ASSET, "--format=canonical"],
    ));
    let report: Value = serde_json::from_str(o.stdout.trim()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 7);

    let export = dir.path().join("export.ndjson");
    let o = ok(run(&cfg, WORKER, &["audit", "show", "--asset", ASSET, "--ndjson"]));
    std::fs::write(&export, o.stdout.replace("\"P1\"", "\"mallory\"")).unwrap();
    let o = ok(run(
        &cfg,
        WORKER,
        &["audit", "verify", "--file", export.to_str().unwrap()],
    ));
    assert!(o.stdout.contains("Broken"), "{}", o.stdout);
}

#[test]
fn advance_past_unapproved_gate_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    asset_with_use_case(&cfg);
    ok(run(&cfg, WORKER, &["gate", "open", "--asset", ASSET, "--gate", "G1"]));
    let o = run(&cfg, WORKER, &["asset", "advance", "--asset", ASSET]);
    assert_eq!(o.code, EXIT_DOMAIN);
    assert!(o.stderr.starts_with("error[GateNotApproved]"), "{}", o.stderr);
    let board = ok(run(&cfg, WORKER, &["--format", "json", "board", "--asset", ASSET]));
    let tile: Value = serde_json::from_str(&board.stdout).unwrap();
    assert_eq!(tile["gates"][0]["state"], "open");
}

#[test]
fn gate_decision_by_card_author_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    asset_with_use_case(&cfg);
    ok(run(
        &cfg,
        APPROVER,
        &[
            "card",
            "approve",
            "--asset",
            ASSET,
            "--kind",
            "UseCase",
            "--rationale",
            "ok",
        ],
    ));
    ok(run(&cfg, WORKER, &["gate", "open", "--asset", ASSET, "--gate", "G1"]));
    let review = format!("{ASSET}:G1:1");
    for item in TestConfig::new()
        .config
        .checklist(GateId::G1)
        .into_iter()
        .filter(|i| i.mandatory)
    {
        let args = [
            "gate",
            "check",
            "--review",
            &review,
            "--item",
            &item.item_id,
            "--result",
            "pass",
        ];
        ok(run(&cfg, WORKER, &args));
    }
    let decide = |who: &str| {
        run(
            &cfg,
            who,
            &[
                "gate",
                "decide",
                "--review",
                &review,
                "--verdict",
                "approve",
                "--rationale",
                "checked",
            ],
        )
    };
    let o = decide(WORKER);
    assert_eq!(o.code, EXIT_DOMAIN);
    assert!(o.stderr.starts_with("error[SoDViolation]"), "{}", o.stderr);
    ok(decide(APPROVER));
    let o = ok(run(
        &cfg,
        WORKER,
        &["--format", "json", "gate", "status", "--asset", ASSET, "--gate", "G1"],
    ));
    let v: Value = serde_json::from_str(&o.stdout).unwrap();
    assert_eq!(v["status"]["decision"], "Approved");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert_eq!(run(&cfg, WORKER, &["asset", "frobnicate"]).code, EXIT_USAGE);
    assert_eq!(
        run(&cfg, WORKER, &["--format", "yaml", "asset", "list"]).code,
        EXIT_USAGE
    );
    assert_eq!(
        run(
            &cfg,
            WORKER,
            &[
                "gate",
                "check",
                "--review",
                "asset-1:G1:1",
                "--item",
                "x",
                "--result",
                "maybe"
            ]
        )
        .code,
        EXIT_USAGE
    );
}

#[test]
fn config_check_reports_invalid_files() {
    let dir = tempfile::tempdir().unwrap();
    let good = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/stagegate.toml");
    let o = ok(run(&good, WORKER, &["config", "check"]));
    assert!(o.stdout.starts_with("ok:"));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[gates]\nquorum = 0\n").unwrap();
    let o = run(&bad, WORKER, &["config", "check"]);
    assert_eq!(o.code, EXIT_DOMAIN);
    assert!(o.stderr.contains("ValidationError"), "{}", o.stderr);
}

#[test]
fn client_mode_talks_to_a_server() {
    let f = TestConfig::new();
    let engine = Arc::new(Engine::open(f.config.clone(), Arc::new(MemoryStore::new())).unwrap());
    let app = stagegate_server::api::router(engine);
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    rt.spawn(async move { axum::serve(listener, app).await });

    let remote = |principal: &str, args: &[&str]| {
        let mut argv = vec!["stagegate", "--server", &url, "--principal", principal];
        argv.extend(args);
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_with(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    };
    let (code, out, _) = remote(OWNER, &["asset", "list"]);
    assert_eq!((code, out.trim()), (EXIT_OK, "(none)"));
    let (code, _, err) = remote(OWNER, &["asset", "create", "--asset", ASSET, "--name", "n"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let (code, _, err) = remote(OUTSIDER, &["asset", "advance", "--asset", ASSET]);
    assert_eq!(code, EXIT_DOMAIN);
    assert!(err.starts_with("error[NotResponsible]"), "{err}");
}
