use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use homi_core::novelty::{train_novelty, NoveltyConfig, NoveltyRow};
use homi_core::optimizers::{Assets, OptimizerConfig};
use homi_core::ppo::{Learner, PpoConfig};
use homi_core::seed;
use homi_core::users::typing::{self, Corpus, KeyboardDesign, TypistPopulation};
use homi_core::users::Task;
use homi_service::{router, AppState, AssetStore, Persistence, TaskAssets};
use rand::Rng;

fn keyboard_assets() -> TaskAssets {
    let space = KeyboardDesign::space();
    let learner = Learner::init(100, 2, &PpoConfig::default(), 3).unwrap();
    let mut rng = seed::rng(5);
    let rows: Vec<NoveltyRow> = (0..150)
        .map(|_| {
            let x: Vec<f64> = (0..2).map(|d| rng.gen_range(space.lower()[d]..space.upper()[d])).collect();
            let a: f64 = rng.gen();
            NoveltyRow {
                y: 0.9 + 0.05 * a,
                x,
                w: vec![a, 1.0 - a],
            }
        })
        .collect();
    let cfg = NoveltyConfig {
        epochs: 3,
        hidden: vec![16, 16],
        mc_passes: 10,
        ..NoveltyConfig::default()
    };
    let novelty = train_novelty(&rows, &space, &cfg, 1).unwrap();
    let assets = Assets {
        actor_with_weights: Some(Arc::new(learner.actor.clone())),
        actor_without_weights: None,
        novelty: Some(Arc::new(novelty)),
        taf_priors: None,
    };
    TaskAssets::new(assets, Some(Task::typing(TypistPopulation::appendix_train())))
}

fn store() -> AssetStore {
    AssetStore {
        sphere: TaskAssets::default(),
        typing: keyboard_assets(),
        optimizer: OptimizerConfig::default(),
        seed: 0,
    }
}

async fn call(app: &axum::Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::Null)
    };
    (status, v)
}

/// Simulated typist answering a proposal.
fn measure(x: &Value, k: u64) -> Value {
    let user = TypistPopulation::appendix_train().mean_user();
    let kb = KeyboardDesign::new(x[0].as_f64().unwrap(), x[1].as_f64().unwrap()).unwrap();
    let sentence = Corpus::bundled().request(&mut seed::rng(k));
    let out = typing::type_sentence(&user, &kb, &sentence, k).unwrap();
    json!({ "wpm": out.wpm, "error_rate": out.error_rate })
}

fn proposals(events_dir: &std::path::Path, id: &str) -> Vec<(u64, u64)> {
    let text = std::fs::read_to_string(events_dir.join(format!("{id}.jsonl"))).unwrap();
    text.lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["event"] == "proposed")
        .map(|v| (v["id"].as_u64().unwrap(), v["index"].as_u64().unwrap()))
        .collect()
}

#[tokio::test]
async fn keyboard_session_lifecycle_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let state = Arc::new(AppState::new(store(), Some(Persistence::new(dir.path(), 2).unwrap())));
    let app = router(state.clone(), None);

    let (s, created) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({"task": {"kind": "keyboard"}, "condition": "naf_plus", "T": 5, "weights": [0.5, 0.5], "seed": 7})),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{created}");
    let id = created["id"].as_str().unwrap().to_string();
    let mut proposal = created["proposal"].clone();
    assert_eq!(proposal["id"], 0);

    let mut last = Value::Null;
    for k in 0..5u64 {
        let mut body = measure(&proposal["x"], k);
        body["proposal"] = proposal["id"].clone();
        let (s, out) = call(&app, Method::POST, &format!("/sessions/{id}/observe"), Some(body)).await;
        assert_eq!(s, StatusCode::OK, "{out}");
        assert_eq!(out["complete"], k == 4);
        if k < 4 {
            proposal = out["proposal"].clone();
            assert_eq!(proposal["id"], k + 1);
        } else {
            assert!(out["proposal"].is_null());
        }
        last = out;
    }
    let history = last["history"].as_array().unwrap();
    assert_eq!(history.len(), 5);
    let best = last["best"]["y"].as_f64().unwrap();
    let max_y = history.iter().map(|r| r["y"].as_f64().unwrap()).fold(f64::MIN, f64::max);
    assert_eq!(best, max_y);

    // Further observations are rejected.
    let (s, _) = call(&app, Method::POST, &format!("/sessions/{id}/observe"), Some(json!({"wpm": 20.0, "error_rate": 0.0}))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, full) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(full["complete"], true);
    assert_eq!(full["t"], 5);
    assert_eq!(full["grid"].as_array().unwrap().len(), 100);
    assert!(dir.path().join(format!("{id}.snapshot.json")).exists());

    // A fresh service replays the log to the same state.
    let logged = proposals(dir.path(), &id);
    assert_eq!(logged.len(), 5);
    let restored = Arc::new(AppState::new(store(), Some(Persistence::new(dir.path(), 2).unwrap())));
    assert!(restored.restore().is_empty());
    let replayed = restored.state(&id).unwrap();
    let again: Vec<(u64, u64)> = replayed.history.iter().map(|r| (r.t as u64, r.index as u64)).collect();
    assert_eq!(again, logged);
    assert_eq!(serde_json::to_value(&replayed).unwrap()["history"], full["history"]);
}

#[tokio::test]
async fn weight_change_recomputes_pending_proposal_deterministically() {
    let make = || async {
        let app = router(Arc::new(AppState::new(store(), None)), None);
        let (_, created) = call(
            &app,
            Method::POST,
            "/sessions",
            Some(json!({"task": {"kind": "keyboard"}, "condition": "standard_bo", "T": 10, "weights": [0.8, 0.2], "seed": 11})),
        )
        .await;
        let id = created["id"].as_str().unwrap().to_string();
        let mut p = created["proposal"].clone();
        for k in 0..7u64 {
            let (_, out) = call(&app, Method::POST, &format!("/sessions/{id}/observe"), Some(measure(&p["x"], k))).await;
            p = out["proposal"].clone();
        }
        let (s, w) = call(&app, Method::PUT, &format!("/sessions/{id}/weights"), Some(json!({"weights": [0.1, 0.9]}))).await;
        assert_eq!(s, StatusCode::OK, "{w}");
        let (_, st) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
        (p, w, st)
    };
    let (before, w1, st1) = make().await;
    let (_, w2, st2) = make().await;
    assert_eq!(w1, w2);
    assert_eq!(w1["weights"], json!([0.1, 0.9]));
    assert_eq!(w1["proposal"]["id"], before["id"]);
    assert_eq!(st1["pending"], w1["proposal"]);
    assert_eq!(st1["history"], st2["history"]);
    // Past observations are rescalarized under the new weights.
    for r in st1["history"].as_array().unwrap() {
        let raw = r["raw"].as_array().unwrap();
        let y = typing::objective(raw[0].as_f64().unwrap(), raw[1].as_f64().unwrap(), &homi_core::design_space::validate_weights(&[0.1, 0.9]).unwrap()).unwrap();
        assert!((r["y"].as_f64().unwrap() - y).abs() < 1e-12);
    }
}

#[tokio::test]
async fn error_statuses() {
    let app = router(Arc::new(AppState::new(store(), None)), None);
    let (s, e) = call(&app, Method::GET, "/sessions/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(e["code"], "not_found");

    let (s, _) = call(&app, Method::POST, "/sessions", Some(json!({"task": {"kind": "keyboard"}, "weights": [0.7, 0.7]}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, _) = call(&app, Method::POST, "/sessions", Some(json!({"task": {"kind": "sphere"}, "weights": [0.5, 0.5]}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);

    let (s, _) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({"task": {"kind": "custom", "lower": [0.0], "upper": [1.0]}, "condition": "naf_plus", "weights": [0.5, 0.5]})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, c) = call(&app, Method::POST, "/sessions", Some(json!({"task": {"kind": "keyboard"}, "condition": "standard_bo", "T": 8, "weights": [0.5, 0.5]}))).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = c["id"].as_str().unwrap();
    let (s, _) = call(&app, Method::POST, &format!("/sessions/{id}/observe"), Some(json!({"wpm": -1.0, "error_rate": 0.1}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, Method::POST, &format!("/sessions/{id}/observe"), Some(json!({"y": 0.4}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, Method::POST, &format!("/sessions/{id}/observe"), Some(json!({"proposal": 3, "wpm": 20.0, "error_rate": 0.1}))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, list) = call(&app, Method::GET, "/sessions", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn custom_task_takes_scalar_observations() {
    let app = router(Arc::new(AppState::new(store(), None)), None);
    let (s, c) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({"task": {"kind": "custom", "lower": [0.0, -1.0, 2.0], "upper": [1.0, 1.0, 3.0], "resolution": [4, 3, 2], "objectives": 1},
                    "condition": "standard_bo", "T": 8, "weights": [1.0]})),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{c}");
    let id = c["id"].as_str().unwrap();
    let mut p = c["proposal"].clone();
    for _ in 0..8 {
        let x: Vec<f64> = p["x"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        let y = -(x[0] - 0.6).powi(2) - x[1].powi(2) - (x[2] - 2.5).powi(2);
        let (s, out) = call(&app, Method::POST, &format!("/sessions/{id}/observe"), Some(json!({"y": y}))).await;
        assert_eq!(s, StatusCode::OK, "{out}");
        p = out["proposal"].clone();
    }
    let (_, st) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(st["complete"], true);
    assert_eq!(st["grid"].as_array().unwrap().len(), 24);
    let rb: Vec<f64> = st["history"].as_array().unwrap().iter().map(|r| r["running_best"].as_f64().unwrap()).collect();
    assert!(rb.windows(2).all(|w| w[1] >= w[0]));
}

#[tokio::test]
async fn static_files_are_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>ok</html>").unwrap();
    let app = router(Arc::new(AppState::new(store(), None)), Some(dir.path().to_path_buf()));
    let req = Request::builder().uri("/index.html").body(Body::empty()).unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}
