use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use fuselens_service::{router, AppState, Config};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(resolution: usize) -> axum::Router {
    let mut config = Config::default();
    config.synthetic.resolution = resolution;
    config.synthetic.count = 2;
    router(Arc::new(AppState::new(config).unwrap()))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn session(app: &axum::Router, model: &str) -> String {
    let (s, v) = json_call(app, "POST", "/sessions", Some(json!({ "model": model }))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v["id"].as_str().unwrap().to_string()
}

async fn wait_job(app: &axum::Router, id: &str) -> Value {
    let mut last = -1.0;
    for _ in 0..2000 {
        let (_, v) = json_call(app, "GET", &format!("/jobs/{id}"), None).await;
        let p = v["progress"].as_f64().unwrap();
        assert!(p >= last, "progress went backwards: {last} -> {p}");
        last = p;
        if !matches!(v["state"].as_str().unwrap(), "pending" | "running") {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {id} did not finish");
}

#[tokio::test]
async fn lists_models_and_pairs() {
    let app = app(32);
    let (s, v) = json_call(&app, "GET", "/models", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["models"].as_array().unwrap().len(), 5);
    let (_, v) = json_call(&app, "GET", "/pairs", None).await;
    assert_eq!(v["pairs"].as_array().unwrap().len(), 2);
    assert_eq!(v["pairs"][0]["height"], 32);
}

#[tokio::test]
async fn session_carries_images_in_unit_range() {
    let app = app(32);
    let (s, v) = json_call(&app, "POST", "/sessions", Some(json!({ "model": "deepfuse" }))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["model"], "DeepFuse");
    assert_eq!(v["gamma_corr1"], 1.0);
    for key in ["x1", "x2", "fused"] {
        assert_eq!(v[key]["width"], 32);
        assert_eq!(v[key]["min"], 0.0);
    }
    let id = v["id"].as_str().unwrap();
    let (s, again) = json_call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(again["fused"], v["fused"]);
}

#[tokio::test]
async fn bad_requests_map_to_status_codes() {
    let app = app(32);
    let (s, v) = json_call(&app, "POST", "/sessions", Some(json!({ "model": "UNet" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("UNet"));
    let (s, _) = json_call(&app, "POST", "/sessions", Some(json!({ "model": "MaskNet", "pair": "nope" }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = json_call(&app, "GET", "/sessions/s999", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = json_call(&app, "GET", "/jobs/j999", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let id = session(&app, "WeightedAveraging").await;
    for (g1, g2) in [(0.05, 1.0), (1.0, 2.5)] {
        let body = json!({ "gamma_corr1": g1, "gamma_corr2": g2 });
        let (s, _) = json_call(&app, "POST", &format!("/sessions/{id}/display"), Some(body)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
    }
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/export/jacobian_x1.png"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/export/jacobian_x1.png?pixel=1025"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/export/jacobian_x1.png?pixel=0"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/export/model.onnx"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = json_call(&app, "GET", &format!("/sessions/{id}/guidance"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/export/scatter.csv?pixel=5"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn display_settings_are_stored() {
    let app = app(32);
    let id = session(&app, "FunFuseAn").await;
    let body = json!({ "gamma_corr1": 0.5, "gamma_corr2": 1.7 });
    let (s, _) = json_call(&app, "POST", &format!("/sessions/{id}/display"), Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    let (_, v) = json_call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(v["gamma_corr1"], 0.5);
    assert_eq!(v["gamma_corr2"], 1.7);
}

#[tokio::test]
async fn guidance_job_completes_and_is_cached() {
    let app = app(32);
    let id = session(&app, "DeepFuse").await;
    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/guidance"), None).await;
    assert_eq!(s, StatusCode::OK);
    let job = v["id"].as_str().unwrap().to_string();
    assert_eq!(v["session"], id.as_str());
    let done = wait_job(&app, &job).await;
    assert_eq!(done["state"], "done");
    assert_eq!(done["progress"], 1.0);

    let (s, g) = json_call(&app, "GET", &format!("/sessions/{id}/guidance"), None).await;
    assert_eq!(s, StatusCode::OK);
    let png = base64::Engine::decode(&base64::engine::general_purpose::STANDARD, g["rgb_png"].as_str().unwrap()).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    let (_, again) = json_call(&app, "GET", &format!("/sessions/{id}/guidance"), None).await;
    assert_eq!(g, again);

    let (_, v) = json_call(&app, "POST", &format!("/sessions/{id}/guidance"), None).await;
    assert_eq!(v["id"], job.as_str());

    let (s, csv) = call(&app, "GET", &format!("/sessions/{id}/export/scatter.csv?pixel=500&radius=2"), None).await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 32 * 32);
    assert_eq!(text.lines().skip(1).filter(|l| l.ends_with(",1")).count(), 25);

    for artifact in ["x1.png", "fused.png", "guidance_x2.png", "guidance_rgb.png", "jacobian_x2.png?pixel=17"] {
        let (s, bytes) = call(&app, "GET", &format!("/sessions/{id}/export/{artifact}"), None).await;
        assert_eq!(s, StatusCode::OK, "{artifact}");
        assert_eq!(&bytes[1..4], b"PNG");
    }
}

#[tokio::test]
async fn cancelled_job_leaves_no_cache() {
    let app = app(128);
    let id = session(&app, "FunFuseAn").await;
    let (_, v) = json_call(&app, "POST", &format!("/sessions/{id}/guidance"), None).await;
    let job = v["id"].as_str().unwrap().to_string();
    let (s, _) = json_call(&app, "POST", &format!("/jobs/{job}/cancel"), None).await;
    assert_eq!(s, StatusCode::OK);
    let end = wait_job(&app, &job).await;
    assert_eq!(end["state"], "cancelled");
    assert!(end["progress"].as_f64().unwrap() < 1.0);
    let (s, _) = json_call(&app, "GET", &format!("/sessions/{id}/guidance"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (_, v) = json_call(&app, "POST", &format!("/sessions/{id}/guidance"), None).await;
    assert_ne!(v["id"], job.as_str());
    let (s, _) = json_call(&app, "POST", &format!("/jobs/{}/cancel", v["id"].as_str().unwrap()), None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn bench_reports_consistent_rates() {
    let app = app(32);
    let id = session(&app, "DeepFuse").await;
    let (s, v) = json_call(&app, "GET", &format!("/sessions/{id}/bench?hovers=20"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["hovers"], 20);
    let (mean, fps) = (v["mean_ms"].as_f64().unwrap(), v["fps"].as_f64().unwrap());
    assert!(mean > 0.0);
    assert!((fps * mean - 1e3).abs() < 1e-6);
    let (s, _) = json_call(&app, "GET", &format!("/sessions/{id}/bench?hovers=0"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}
