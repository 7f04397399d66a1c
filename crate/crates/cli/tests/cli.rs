use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use axum::body::Body;
use axum::http::Request;
use eoc_api::{router, AppState};
use eoc_core::config::PlatformConfig;
use eoc_core::fixtures::{write_f1, write_monthly_admissions};
use eoc_core::store::{Mode, Repository};
use http_body_util::BodyExt;
use tower::ServiceExt;

fn eoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eoc"))
        .args(args)
        .env_remove("EOC_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn ingested_f1(dir: &Path) -> String {
    let cfg = write_f1(dir).unwrap().display().to_string();
    let o = eoc(&["ingest", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    cfg
}

#[test]
fn ingest_twice_reports_zero_upserts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ingested_f1(dir.path());
    let second = stdout(&eoc(&["ingest", "--config", &cfg]));
    assert!(second.lines().last().unwrap().starts_with("upserted 0,"), "{second}");
    let json = eoc(&["ingest", "--config", &cfg, "--json"]);
    let report: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(report["build"]["episodes_written"], 0);
    let rebuilt = stdout(&eoc(&["ingest", "--config", &cfg, "--rebuild"]));
    assert!(rebuilt.contains("upserted 0, episodes written 0"), "{rebuilt}");
}

#[test]
fn kpi_table_shows_march_average_stay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ingested_f1(dir.path());
    let o = eoc(&["kpi", "AVG_LOS", "--config", &cfg, "--from", "2015-03-01T00:00:00Z", "--to", "2015-04-01T00:00:00Z", "--bucket", "MONTH"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let row = out.lines().find(|l| l.starts_with("2015-03-01")).unwrap();
    let cols: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(cols, ["2015-03-01T00:00:00Z", "2015-04-01T00:00:00Z", "all", "5.5", "2"]);
    let header = out.lines().nth(1).unwrap();
    assert_eq!(header.find("value"), row.find("5.5"));
}

#[tokio::test]
async fn kpi_json_equals_api_body() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ingested_f1(dir.path());
    let cases: [&[&str]; 4] = [
        &["AVG_LOS", "--from", "2015-03-01T00:00:00Z", "--to", "2015-04-01T00:00:00Z"],
        &["REVENUE", "--from", "2015-02-20T00:00:00Z", "--to", "2015-03-20T00:00:00Z", "--bucket", "week", "--group-by", "gender,department"],
        &["OCCUPANCY_RATE", "--from", "2015-03-01T00:00:00Z", "--to", "2015-03-12T00:00:00Z", "--bucket", "DAY", "--filter", "procedure = \"stent\""],
        &["SEPSIS_DOOR_TO_ANTIBIOTIC", "--from", "2015-03-01T00:00:00Z", "--to", "2015-04-01T00:00:00Z", "--group-by", "age_band"],
    ];
    let mut cli_bodies = Vec::new();
    for args in cases {
        let mut full = vec!["kpi"];
        full.extend_from_slice(args);
        full.extend_from_slice(&["--config", &cfg, "--json"]);
        let o = eoc(&full);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        cli_bodies.push(stdout(&o).trim_end().to_string());
    }
    let pc = PlatformConfig::load(Path::new(&cfg)).unwrap();
    let repo = Repository::open(&pc.repository, Mode::ReadOnly).unwrap();
    let app = router(AppState::new(repo, pc).unwrap());
    let uris = [
        "/kpi/AVG_LOS?from=2015-03-01T00:00:00Z&to=2015-04-01T00:00:00Z",
        "/kpi/REVENUE?from=2015-02-20T00:00:00Z&to=2015-03-20T00:00:00Z&bucket=week&group_by=gender,department",
        "/kpi/OCCUPANCY_RATE?from=2015-03-01T00:00:00Z&to=2015-03-12T00:00:00Z&bucket=DAY&filter=procedure%20%3D%20%22stent%22",
        "/kpi/SEPSIS_DOOR_TO_ANTIBIOTIC?from=2015-03-01T00:00:00Z&to=2015-04-01T00:00:00Z&group_by=age_band",
    ];
    for (uri, cli) in uris.iter().zip(&cli_bodies) {
        let resp = app.clone().oneshot(Request::get(*uri).body(Body::empty()).unwrap()).await.unwrap();
        assert_eq!(resp.status(), 200);
        let body = resp.into_body().collect().await.unwrap().to_bytes();
        assert_eq!(std::str::from_utf8(&body).unwrap(), cli, "{uri}");
    }
}

#[test]
fn forecast_on_linear_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let jan = chrono::NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
    let cfg = write_monthly_admissions(dir.path(), jan, &[100, 110, 120, 130]).unwrap().display().to_string();
    assert!(eoc(&["ingest", "--config", &cfg]).status.success());
    let o = eoc(&["forecast", "ADMISSION_COUNT", "--config", &cfg, "--horizon", "2", "--json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let p: Vec<f64> = v["projected"].as_array().unwrap().iter().map(|p| p["value"].as_f64().unwrap()).collect();
    assert!((p[0] - 140.0).abs() < 1e-9 && (p[1] - 150.0).abs() < 1e-9, "{p:?}");
    let table = stdout(&eoc(&["forecast", "ADMISSION_COUNT", "--config", &cfg, "--horizon", "1", "--scenario", "1.1"]));
    assert!(table.lines().any(|l| l.contains("projected") && l.contains("154")), "{table}");
    let zero = eoc(&["forecast", "ADMISSION_COUNT", "--config", &cfg, "--horizon", "0"]);
    assert_eq!(zero.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ingested_f1(dir.path());
    let unknown = eoc(&["kpi", "AVG_LOS", "--config", &cfg, "--bogus"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage:"));
    assert_eq!(eoc(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(eoc(&["--help"]).status.code(), Some(0));

    let window = ["--from", "2015-04-01T00:00:00Z", "--to", "2015-03-01T00:00:00Z"];
    let mut args = vec!["kpi", "AVG_LOS", "--config", &cfg];
    args.extend_from_slice(&window);
    assert_eq!(eoc(&args).status.code(), Some(1));
    let bad_filter = eoc(&["kpi", "AVG_LOS", "--config", &cfg, "--from", "2015-03-01T00:00:00Z", "--to", "2015-04-01T00:00:00Z", "--filter", "los >="]);
    assert_eq!(bad_filter.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_filter.stderr).contains("at byte 6"));
    assert_eq!(eoc(&["kpi", "LOS", "--config", &cfg, "--from", "2015-03-01T00:00:00Z", "--to", "2015-04-01T00:00:00Z"]).status.code(), Some(1));

    let missing = eoc(&["kpi", "AVG_LOS", "--config", "/nonexistent/eoc.toml", "--from", "2015-03-01T00:00:00Z", "--to", "2015-04-01T00:00:00Z"]);
    assert_eq!(missing.status.code(), Some(2));
    std::fs::remove_file(dir.path().join("adt.csv")).unwrap();
    assert_eq!(eoc(&["ingest", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(eoc(&["generate", "--days", "0", "--out", &dir.path().join("g").display().to_string()]).status.code(), Some(1));
}

#[test]
fn config_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ingested_f1(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_eoc"))
        .args(["kpi", "ADMISSION_COUNT", "--from", "2015-03-01T00:00:00Z", "--to", "2015-04-01T00:00:00Z", "--json"])
        .env("EOC_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["buckets"][0]["value"], 2.0);
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a").display().to_string();
    let b = dir.path().join("b").display().to_string();
    for out in [&a, &b] {
        let o = eoc(&["generate", "--seed", "9", "--patients", "15", "--days", "20", "--out", out]);
        assert!(o.status.success());
        let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(m["counts"]["patients"], 15);
    }
    for f in ["adt.csv", "billing.jsonl", "clinical.jsonl", "ground_truth.json"] {
        assert_eq!(std::fs::read(Path::new(&a).join(f)).unwrap(), std::fs::read(Path::new(&b).join(f)).unwrap(), "{f}");
    }
}

#[test]
fn watch_polls_until_max_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_f1(dir.path()).unwrap().display().to_string();
    let o = eoc(&["ingest", "--config", &cfg, "--watch", "0", "--max-runs", "3"]);
    assert!(o.status.success());
    let summaries: Vec<String> = stdout(&o).lines().filter(|l| l.starts_with("upserted")).map(String::from).collect();
    assert_eq!(summaries.len(), 3);
    assert!(summaries[0].starts_with("upserted 13,"));
    assert!(summaries[1].starts_with("upserted 0,") && summaries[2].starts_with("upserted 0,"));
}

#[test]
fn serve_answers_health() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ingested_f1(dir.path());
    let mut child = Command::new(env!("CARGO_BIN_EXE_eoc"))
        .args(["serve", "--config", &cfg, "--port", "0"])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap().to_string();
    let mut s = TcpStream::connect(&addr).unwrap();
    write!(s, "GET /health HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"episode_count\":2"), "{resp}");
}
