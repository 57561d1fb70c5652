mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::{env, Env};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use toonscan::server::{router, AppState};
use toonscan::workspace::Workspace;
use toonscan_core::model::read_audit_log;
use tower::ServiceExt;

fn app(e: &Env) -> (Router, AppState) {
    let ws = Workspace::open(e.app_config(), &e.manifest).unwrap();
    let state = AppState::new(ws).unwrap();
    (router(state.clone(), None), state)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, key: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(k) = key {
        req = req.header("Idempotency-Key", k);
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

async fn wait_job(app: &Router, id: &str) -> Value {
    for _ in 0..1500 {
        let (s, v) = call(app, "GET", &format!("/v1/jobs/{id}"), None, None).await;
        assert_eq!(s, StatusCode::OK);
        if v["status"] == "done" || v["status"] == "failed" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("job {id} did not finish");
}

#[tokio::test]
async fn samples_listing_and_lookup() {
    let e = env();
    let (app, _) = app(&e);
    let (s, v) = call(&app, "GET", "/v1/samples?split=test", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 120);
    let (s, v) = call(&app, "GET", "/v1/samples", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 130);
    let (s, _) = call(&app, "GET", "/v1/samples?split=bogus", None, None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, v) = call(&app, "GET", "/v1/samples/test-010", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["motion"].as_str().is_some());
    let (s, _) = call(&app, "GET", "/v1/samples/nope", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/v1/nothing-here", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn images_and_overlays_are_png() {
    let e = env();
    let (app, _) = app(&e);
    for path in ["/v1/samples/test-010/image", "/v1/samples/test-010/overlay"] {
        let req = Request::builder().uri(path).body(Body::empty()).unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK, "{path}");
        assert_eq!(resp.headers()["content-type"], "image/png");
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        assert_eq!(&bytes[..4], b"\x89PNG");
    }
    let (s, _) = call(&app, "GET", "/v1/samples/nope/overlay", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn annotation_round_trip_is_idempotent() {
    let e = env();
    let (app, _) = app(&e);
    let body = json!({"label": "hallucinated", "description": "three arms", "defect": "many_components", "annotator": "ann"});
    let (s, first) = call(&app, "PUT", "/v1/samples/test-010/annotation", Some(body.clone()), Some("req-1")).await;
    assert_eq!(s, StatusCode::OK);
    let (s, again) = call(&app, "PUT", "/v1/samples/test-010/annotation", Some(body), Some("req-1")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(first, again);
    let (_, got) = call(&app, "GET", "/v1/samples/test-010", None, None).await;
    assert_eq!(got["annotation"], first["annotation"]);
    assert_eq!(got["annotation"]["description"], "three arms");
    let audit = read_audit_log(&toonscan_core::model::audit_log_path(&e.manifest)).unwrap();
    assert_eq!(audit.iter().filter(|r| r.sample_id == "test-010").count(), 1);

    let bad = json!({"label": "hallucinated", "description": " "});
    let (s, v) = call(&app, "PUT", "/v1/samples/test-010/annotation", Some(bad), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    let (s, _) = call(&app, "PUT", "/v1/samples/nope/annotation", Some(json!({"label": "correct"})), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn request_ids_survive_restart() {
    let e = env();
    let body = json!({"label": "correct", "description": "", "annotator": "ann"});
    let first = {
        let (app, _) = app(&e);
        call(&app, "PUT", "/v1/samples/test-011/annotation", Some(body.clone()), Some("req-r")).await
    };
    let (app, _) = app(&e);
    let second = call(&app, "PUT", "/v1/samples/test-011/annotation", Some(body), Some("req-r")).await;
    assert_eq!(first, second);
    let audit = read_audit_log(&toonscan_core::model::audit_log_path(&e.manifest)).unwrap();
    assert_eq!(audit.iter().filter(|r| r.sample_id == "test-011").count(), 1);
}

#[tokio::test]
async fn pool_is_locked_during_learn() {
    let e = env();
    let (app, _) = app(&e);
    let (s, pool) = call(&app, "GET", "/v1/pool", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(pool["correct"].as_array().unwrap().len(), 5);
    assert_eq!(pool["hallucinated"].as_array().unwrap().len(), 5);
    let ids: Vec<Value> = pool["correct"].as_array().unwrap().iter().chain(pool["hallucinated"].as_array().unwrap()).cloned().collect();

    let (s, job) = call(&app, "POST", "/v1/jobs", Some(json!({"kind": "learn", "run_id": "slow-run", "backend": "slow"})), None).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{job}");
    let (s, _) = call(&app, "PUT", "/v1/pool", Some(json!({"ids": ids})), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&app, "POST", "/v1/jobs", Some(json!({"kind": "learn", "run_id": "slow-run"})), None).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let done = wait_job(&app, job["job_id"].as_str().unwrap()).await;
    assert_eq!(done["status"], "done", "{done}");
    let (s, v) = call(&app, "PUT", "/v1/pool", Some(json!({"ids": ids[..8]})), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["correct"].as_array().unwrap().len() + v["hallucinated"].as_array().unwrap().len(), 8);
}

#[tokio::test]
async fn learn_detect_override_flow() {
    let e = env();
    let (app, _) = app(&e);
    let (s, job) = call(&app, "POST", "/v1/jobs", Some(json!({"kind": "learn", "run_id": "web"})), Some("job-1")).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let (s, replay) = call(&app, "POST", "/v1/jobs", Some(json!({"kind": "learn", "run_id": "web"})), Some("job-1")).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(replay["job_id"], job["job_id"]);
    let done = wait_job(&app, job["job_id"].as_str().unwrap()).await;
    assert_eq!(done["status"], "done", "{done}");
    assert_eq!(done["summary"]["state"], json!({"state": "learned", "n": 10}));

    let (s, v) = call(&app, "GET", "/v1/runs/web/results", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["learn"]["state"], json!({"state": "learned", "n": 10}));
    assert_eq!(v["rows"].as_array().unwrap().len(), 0);

    let (s, job) = call(&app, "POST", "/v1/jobs", Some(json!({"kind": "detect", "run_id": "web"})), None).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let done = wait_job(&app, job["job_id"].as_str().unwrap()).await;
    assert_eq!(done["status"], "done", "{done}");
    assert_eq!(done["progress"], json!([1, 1]));

    let (_, v) = call(&app, "GET", "/v1/runs/web/results", None, None).await;
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 120);
    let row = rows.iter().find(|r| r["predicted"] == "hallucinated" && r["truth"] == "correct").unwrap();
    let id = row["sample_id"].as_str().unwrap().to_string();
    let raw_before = std::fs::read(e.runs().join("web/results.json")).unwrap();

    let body = json!({"sample_id": id, "label": "correct", "reason": "limb hidden behind torso", "author": "rev"});
    let (s, o) = call(&app, "POST", "/v1/results/web/override", Some(body.clone()), Some("ov-1")).await;
    assert_eq!(s, StatusCode::CREATED, "{o}");
    let (s, o2) = call(&app, "POST", "/v1/results/web/override", Some(body), Some("ov-1")).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(o, o2);
    let log = std::fs::read_to_string(e.runs().join("web/overrides.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert_eq!(std::fs::read(e.runs().join("web/results.json")).unwrap(), raw_before);

    let (_, v) = call(&app, "GET", "/v1/runs/web/results", None, None).await;
    let row = v["rows"].as_array().unwrap().iter().find(|r| r["sample_id"] == id.as_str()).unwrap().clone();
    assert_eq!(row["predicted"], "hallucinated");
    assert_eq!(row["effective"], "correct");
    assert_eq!(row["overridden"]["reason"], "limb hidden behind torso");

    let bad = json!({"sample_id": id, "label": "correct", "reason": ""});
    let (s, _) = call(&app, "POST", "/v1/results/web/override", Some(bad), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let ghost = json!({"sample_id": "nope", "label": "correct", "reason": "x"});
    let (s, _) = call(&app, "POST", "/v1/results/web/override", Some(ghost), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/v1/runs/nope/results", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn job_validation() {
    let e = env();
    let (app, _) = app(&e);
    let (s, _) = call(&app, "POST", "/v1/jobs", Some(json!({"kind": "detect"})), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", "/v1/jobs", Some(json!({"kind": "detect", "run_id": "never"})), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/v1/jobs", Some(json!({"kind": "learn", "backend": "ghost"})), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", "/v1/jobs", Some(json!({"kind": "learn", "run_id": "../x"})), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", "/v1/jobs", Some(json!({"kind": "matrix"})), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "GET", "/v1/jobs/job-missing", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn matrix_job_writes_report() {
    let e = env();
    let (app, _) = app(&e);
    let spec = json!({"variants": ["B", "D5"], "shots_per_class": [1], "transforms": ["none"], "backends": ["mock"], "seed": 2});
    let (s, job) = call(&app, "POST", "/v1/jobs", Some(json!({"kind": "matrix", "run_id": "mx", "spec": spec})), None).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{job}");
    let done = wait_job(&app, job["job_id"].as_str().unwrap()).await;
    assert_eq!(done["status"], "done", "{done}");
    assert_eq!(done["summary"], json!({"cells": 2, "failed_cells": 0}));
    assert!(e.runs().join("mx/report.txt").is_file());
}

/// The service's state after a restart comes from disk alone.
#[tokio::test]
async fn restart_reconstructs_state() {
    let e = env();
    let job_id = {
        let (app, _) = app(&e);
        call(&app, "PUT", "/v1/samples/test-012/annotation", Some(json!({"label": "correct"})), None).await;
        let (_, job) = call(&app, "POST", "/v1/jobs", Some(json!({"kind": "learn", "run_id": "keep"})), None).await;
        let id = job["job_id"].as_str().unwrap().to_string();
        wait_job(&app, &id).await;
        id
    };
    let (app, _) = app(&e);
    let (_, v) = call(&app, "GET", "/v1/samples/test-012", None, None).await;
    assert_eq!(v["annotation"]["label"], "correct");
    let (_, v) = call(&app, "GET", &format!("/v1/jobs/{job_id}"), None, None).await;
    assert_eq!(v["status"], "done");
    let (s, v) = call(&app, "GET", "/v1/runs/keep/results", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["learn"]["state"], json!({"state": "learned", "n": 10}));
}

/// The HTTP and command-line paths write identical detection results.
#[tokio::test]
async fn http_and_cli_results_match() {
    let e = env();
    {
        let (app, _) = app(&e);
        let (_, job) = call(&app, "POST", "/v1/jobs", Some(json!({"kind": "learn", "run_id": "via-http"})), None).await;
        wait_job(&app, job["job_id"].as_str().unwrap()).await;
        let (_, job) = call(&app, "POST", "/v1/jobs", Some(json!({"kind": "detect", "run_id": "via-http", "transform": "hflip"})), None).await;
        let done = wait_job(&app, job["job_id"].as_str().unwrap()).await;
        assert_eq!(done["status"], "done");
    }
    assert!(e.cli(&["--run-id", "via-cli", "learn"]).status.success());
    assert!(e.cli(&["--run-id", "via-cli", "detect", "--transform", "hflip"]).status.success());
    let read = |run: &str| std::fs::read_to_string(e.runs().join(run).join("results.json")).unwrap();
    assert_eq!(read("via-http"), read("via-cli"));
}
