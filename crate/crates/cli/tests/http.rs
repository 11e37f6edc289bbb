mod common;

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::*;
use http_body_util::BodyExt;
use protorbf_cli::service::{router, AppState};
use protorbf_cli::workspace::Workspace;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(ws: &Path, k: usize) -> (Router, Arc<AppState>) {
    let state = AppState::load(Workspace::open(ws).unwrap(), k, 0).unwrap();
    (router(Arc::clone(&state)), state)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn select(app: &Router, key: &str, decision: &str) -> (StatusCode, Value) {
    let body = json!({ "segment_key": key, "decision": decision }).to_string();
    call(app, "POST", "/api/selections", Some(body)).await
}

fn keys(candidates: &Value) -> Vec<String> {
    candidates["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["segment_key"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn selections_validate_their_input() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = embedded_workspace(tmp.path(), 2, 1);
    let (app, _) = app(&ws, 2);

    let (status, body) = select(&app, "nope:0", "accepted").await;
    assert_eq!(status, StatusCode::NOT_FOUND, "{body}");
    // test-split segments are not concept candidates
    assert_eq!(select(&app, "test_red_0:0", "accepted").await.0, StatusCode::NOT_FOUND);

    for bad in ["{", r#"{"segment_key": "train_red_0:0"}"#, r#"{"segment_key": "x", "decision": "accepted"}"#] {
        let (status, _) = call(&app, "POST", "/api/selections", Some(bad.into())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
    }
    let (status, _) = select(&app, "train_red_0:0", "maybe").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, s) = call(&app, "GET", "/api/status", None).await;
    assert_eq!(s["revision"], 0, "rejected requests leave the log untouched");
}

#[tokio::test]
async fn accepted_segment_leaves_the_queue() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = embedded_workspace(tmp.path(), 2, 1);
    let (app, _) = app(&ws, 2);

    let (status, before) = call(&app, "GET", "/api/candidates?class=red&limit=100", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before["acquisition"], "class_mean_deviation");
    assert_eq!(before["total"], 8);
    let first = keys(&before)[0].clone();
    assert!(before["candidates"][0]["crop_url"].as_str().unwrap().starts_with("/crops/"));

    let (status, body) = select(&app, &first, "accepted").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["revision"], 1);

    let (_, after) = call(&app, "GET", "/api/candidates?class=1&limit=100", None).await;
    assert_eq!(after["class"], "red");
    assert_eq!(after["acquisition"], "nearest_accepted");
    assert_eq!(after["total"], 7);
    assert!(!keys(&after).contains(&first));

    let (_, limited) = call(&app, "GET", "/api/candidates?class=red&limit=3", None).await;
    assert_eq!(keys(&limited).len(), 3);

    assert_eq!(call(&app, "GET", "/api/candidates", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "GET", "/api/candidates?class=green", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn repeated_selection_only_bumps_revision() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = embedded_workspace(tmp.path(), 2, 0);
    let (app, state) = app(&ws, 2);
    let _ = state;

    let (_, a) = select(&app, "train_blue_1:2", "rejected").await;
    let (_, b) = select(&app, "train_blue_1:2", "rejected").await;
    assert_eq!(a["revision"], 1);
    assert_eq!(b["revision"], 2);
    assert_eq!(a["accepted_per_class"], b["accepted_per_class"]);

    // the log on disk replays to the same decisions
    let (app2, _) = self::app(&ws, 2);
    let (_, s) = call(&app2, "GET", "/api/status", None).await;
    assert_eq!(s["revision"], 2);
    let (_, q) = call(&app2, "GET", "/api/candidates?class=blue&limit=100", None).await;
    assert!(!keys(&q).contains(&"train_blue_1:2".to_string()));
    assert_eq!(q["total"], 7);
}

#[tokio::test]
async fn recluster_closes_the_curation_loop() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = embedded_workspace(tmp.path(), 2, 1);
    let k = 2;
    let (app, _) = app(&ws, k);

    assert_eq!(call(&app, "GET", "/api/prototypes", None).await.0, StatusCode::NOT_FOUND);

    // one accepted segment per class is short of k
    select(&app, "train_blue_0:0", "accepted").await;
    select(&app, "train_red_0:0", "accepted").await;
    let (status, body) = call(&app, "POST", "/api/recluster", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    assert_eq!(body["shortfall"].as_array().unwrap().len(), 2);
    assert_eq!(body["shortfall"][0]["required"], k);

    // 2k accepted per class
    for class in ["blue", "red"] {
        for (img, seg) in [(0, 1), (1, 0), (1, 1)] {
            let (status, _) = select(&app, &format!("train_{class}_{img}:{seg}"), "accepted").await;
            assert_eq!(status, StatusCode::OK);
        }
    }
    let (status, first) = call(&app, "POST", "/api/recluster", None).await;
    assert_eq!(status, StatusCode::OK, "{first}");
    let protos = first["prototypes"].as_array().unwrap();
    assert_eq!(protos.len(), 2 * k);
    for c in 0..2 {
        assert_eq!(protos.iter().filter(|p| p["class_index"] == c).count(), k);
    }
    assert_eq!(first["revision"], 8);
    let (_, listed) = call(&app, "GET", "/api/prototypes", None).await;
    assert_eq!(listed["prototypes"], first["prototypes"]);
    assert!(ws.join("prototypes.json").is_file());

    // every medoid is an accepted segment with a servable crop
    let url = protos[0]["crop_url"].as_str().unwrap();
    let resp = app
        .clone()
        .oneshot(Request::builder().uri(url).body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);

    // rejecting a current prototype changes the next set
    let victim = protos[0]["source_segment"].as_str().unwrap().to_string();
    select(&app, &victim, "rejected").await;
    let extra = if victim.starts_with("train_blue") { "train_blue_0:2" } else { "train_red_0:2" };
    select(&app, extra, "accepted").await;
    let (_, second) = call(&app, "POST", "/api/recluster", None).await;
    assert_eq!(second["revision"], 10);
    assert!(second["prototypes"].as_array().unwrap().iter().all(|p| p["source_segment"] != victim.as_str()));

    let (_, s) = call(&app, "GET", "/api/status", None).await;
    assert_eq!(s["stages"], json!(["segmented", "embedded", "curated", "clustered"]));
    assert_eq!(s["prototypes"], 2 * k);
}

#[tokio::test]
async fn explanations_need_a_model_and_a_known_image() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = embedded_workspace(tmp.path(), 3, 1);
    {
        let (app, _) = app(&ws, 2);
        let (status, body) = call(&app, "GET", "/api/explanations/test_red_0", None).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert!(body["error"].as_str().unwrap().contains("model"));
    }

    ok(protorbf(&ws, &["cluster", "--auto-accept-all", "--k-per-class", "2"]));
    ok(protorbf(&ws, &["train"]));
    let (app, _) = app(&ws, 2);
    let (status, e) = call(&app, "GET", "/api/explanations/test_red_0", None).await;
    assert_eq!(status, StatusCode::OK);
    let segments = e["segments"].as_array().unwrap();
    assert_eq!(segments.len(), 4);
    for s in segments {
        assert!(s["top_prototype"]["crop_url"].as_str().unwrap().starts_with("/crops/train_"));
        let a = s["top_prototype"]["activation"].as_f64().unwrap();
        assert!(a > 0.0 && a <= 1.0);
    }
    let total: f64 = e["image_probabilities"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert_eq!(call(&app, "GET", "/api/explanations/nope", None).await.0, StatusCode::NOT_FOUND);

    // with a model the queue ranks by entropy
    let (_, q) = call(&app, "GET", "/api/candidates?class=red", None).await;
    assert_eq!(q["acquisition"], "entropy");
}

#[tokio::test]
async fn root_serves_a_page_without_built_assets() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = embedded_workspace(tmp.path(), 2, 0);
    let (app, _) = app(&ws, 2);
    let resp = app
        .clone()
        .oneshot(Request::builder().uri("/").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);

    std::fs::create_dir_all(ws.join("ui")).unwrap();
    std::fs::write(ws.join("ui/index.html"), "<p>built ui</p>").unwrap();
    let resp = app
        .oneshot(Request::builder().uri("/").body(Body::empty()).unwrap())
        .await
        .unwrap();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"<p>built ui</p>");
}
