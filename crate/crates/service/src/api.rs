use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use futures::{SinkExt, StreamExt};
use fuselens_core::data::{encode_gray_png, ImagePair};
use fuselens_core::saliency::{
    gamma_correct, guidance_pair, guidance_rgb, jacobian_pair, joint_normalize, scatter_data, write_scatter_csv,
    DisplayConfig, GuidanceOptions, DEFAULT_NEIGHBORHOOD_RADIUS,
};
use fuselens_core::{Error as CoreError, ModelKind};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::watch;

use crate::payload::{display_pair, hover, HoverRequest, ImagePayload};
use crate::state::{AppState, Job, JobState, Session};
use crate::ServiceError;

type App = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ServiceError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/models", get(list_models))
        .route("/pairs", get(list_pairs))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/display", post(set_display))
        .route("/sessions/{id}/hover", get(hover_socket))
        .route("/sessions/{id}/guidance", post(start_guidance).get(get_guidance))
        .route("/sessions/{id}/bench", get(bench))
        .route("/sessions/{id}/export/{artifact}", get(export))
        .route("/jobs/{id}", get(job_status))
        .route("/jobs/{id}/cancel", post(cancel_job))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Config(format!("worker failed: {e}")))?
}

async fn list_models() -> Json<serde_json::Value> {
    let names: Vec<&str> = ModelKind::ALL.iter().map(|k| k.name()).collect();
    Json(json!({ "models": names }))
}

async fn list_pairs(State(app): App) -> Json<serde_json::Value> {
    let pairs: Vec<_> = app
        .pairs
        .iter()
        .map(|p| json!({ "id": p.id, "height": p.x1.height(), "width": p.x1.width() }))
        .collect();
    Json(json!({ "pairs": pairs }))
}

#[derive(Deserialize)]
struct CreateSession {
    model: String,
    pair: Option<String>,
}

#[derive(Serialize)]
struct SessionInfo {
    id: String,
    model: &'static str,
    pair: String,
    height: usize,
    width: usize,
    gamma_corr1: f64,
    gamma_corr2: f64,
    x1: ImagePayload,
    x2: ImagePayload,
    fused: ImagePayload,
}

fn info(session: &Session) -> SessionInfo {
    let pair: &ImagePair<f64> = &session.pair;
    let d = session.display();
    SessionInfo {
        id: session.id.clone(),
        model: session.kind.name(),
        pair: pair.id.clone(),
        height: pair.x1.height(),
        width: pair.x1.width(),
        gamma_corr1: d.gamma_corr1,
        gamma_corr2: d.gamma_corr2,
        x1: ImagePayload::unit(&pair.x1, 0.0, 1.0),
        x2: ImagePayload::unit(&pair.x2, 0.0, 1.0),
        fused: ImagePayload::unit(&session.fused, 0.0, 1.0),
    }
}

async fn create_session(State(app): App, Json(body): Json<CreateSession>) -> ApiResult<Json<SessionInfo>> {
    let session = blocking(move || app.create_session(&body.model, body.pair.as_deref())).await?;
    tracing::info!(session = %session.id, model = session.kind.name(), "session created");
    Ok(Json(info(&session)))
}

async fn session_info(State(app): App, Path(id): Path<String>) -> ApiResult<Json<SessionInfo>> {
    let session = app.session(&id)?;
    Ok(Json(info(&session)))
}

#[derive(Deserialize, Serialize)]
struct DisplayBody {
    gamma_corr1: f64,
    gamma_corr2: f64,
}

async fn set_display(State(app): App, Path(id): Path<String>, Json(body): Json<DisplayBody>) -> ApiResult<Json<DisplayBody>> {
    let session = app.session(&id)?;
    let cfg = DisplayConfig::new(body.gamma_corr1, body.gamma_corr2)
        .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    *session.display.lock().unwrap() = cfg;
    Ok(Json(body))
}

async fn hover_socket(State(app): App, Path(id): Path<String>, ws: WebSocketUpgrade) -> ApiResult<Response> {
    let session = app.session(&id)?;
    Ok(ws.on_upgrade(move |socket| hover_loop(socket, session)))
}

/// Reads hover requests into a depth-one latest-wins slot; a single worker
/// answers whatever is newest once the previous answer has been sent.
async fn hover_loop(socket: WebSocket, session: Arc<Session>) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = watch::channel::<Option<Result<usize, String>>>(None);
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            let request = match msg {
                Message::Text(text) => serde_json::from_str::<HoverRequest>(&text)
                    .map(|r| r.pixel)
                    .map_err(|e| format!("malformed hover request: {e}")),
                Message::Close(_) => break,
                _ => continue,
            };
            if tx.send(Some(request)).is_err() {
                break;
            }
        }
    });
    while rx.changed().await.is_ok() {
        let Some(request) = rx.borrow_and_update().clone() else { continue };
        let reply = match request {
            Ok(pixel) => {
                let s = session.clone();
                match blocking(move || hover(&s, pixel)).await {
                    Ok(mut msg) => {
                        msg.seq = session.next_seq();
                        serde_json::to_string(&msg).expect("serializable")
                    }
                    Err(e) => json!({ "error": e.to_string(), "pixel": pixel }).to_string(),
                }
            }
            Err(e) => json!({ "error": e }).to_string(),
        };
        if sink.send(Message::Text(reply.into())).await.is_err() {
            break;
        }
    }
    reader.abort();
}

#[derive(Serialize)]
struct JobStatus {
    id: String,
    session: String,
    state: &'static str,
    progress: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn status(job: &Job) -> JobStatus {
    JobStatus {
        id: job.id.clone(),
        session: job.session.clone(),
        state: job.state().label(),
        progress: job.progress(),
        error: job.error.lock().unwrap().clone(),
    }
}

fn run_job(session: Arc<Session>, job: Arc<Job>) {
    if job.cancel.load(Ordering::SeqCst) {
        job.set_state(JobState::Cancelled);
        return;
    }
    job.set_state(JobState::Running);
    let result = guidance_pair(
        &session.pass,
        GuidanceOptions::default(),
        |done, _| job.done.store(done, Ordering::SeqCst),
        Some(&job.cancel),
    );
    match result {
        Ok(pair) => {
            *session.guidance.lock().unwrap() = Some(Arc::new(pair));
            job.set_state(JobState::Done);
        }
        Err(CoreError::Cancelled) => job.set_state(JobState::Cancelled),
        Err(e) => {
            *job.error.lock().unwrap() = Some(e.to_string());
            job.set_state(JobState::Failed);
        }
    }
}

async fn start_guidance(State(app): App, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    let session = app.session(&id)?;
    let (job, fresh) = app.guidance_job(&session);
    if fresh {
        let j = job.clone();
        tokio::task::spawn_blocking(move || run_job(session, j));
    }
    Ok(Json(status(&job)))
}

async fn job_status(State(app): App, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    let job = app.job(&id)?;
    Ok(Json(status(&job)))
}

async fn cancel_job(State(app): App, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    let job = app.job(&id)?;
    if job.state() != JobState::Done {
        job.cancel.store(true, Ordering::SeqCst);
    }
    Ok(Json(status(&job)))
}

fn cached(session: &Session) -> ApiResult<Arc<crate::state::GuidancePair>> {
    session
        .cached_guidance()
        .ok_or_else(|| ServiceError::Conflict("guidance not computed; POST /sessions/{id}/guidance first".into()))
}

async fn get_guidance(State(app): App, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let session = app.session(&id)?;
    let g = cached(&session)?;
    let gamma = session.display().gamma_corr2;
    let (p1, p2) = display_pair(&g.0.values, &g.1.values, gamma)?;
    let rgb = guidance_rgb(&g.0, &g.1, &session.fused)?;
    Ok(Json(json!({
        "gamma": gamma,
        "guidance_x1": p1,
        "guidance_x2": p2,
        "rgb_png": STANDARD.encode(rgb.to_png()?),
    })))
}

#[derive(Deserialize)]
struct ExportQuery {
    pixel: Option<usize>,
    radius: Option<usize>,
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn export(State(app): App, Path((id, artifact)): Path<(String, String)>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    let session = app.session(&id)?;
    let pixel = || q.pixel.ok_or_else(|| ServiceError::BadRequest(format!("{artifact} needs ?pixel=")));
    let display = session.display();
    let bytes = match artifact.as_str() {
        "x1.png" => encode_gray_png(&session.pair.x1)?,
        "x2.png" => encode_gray_png(&session.pair.x2)?,
        "fused.png" => encode_gray_png(&session.fused)?,
        "jacobian_x1.png" | "jacobian_x2.png" => {
            let (j1, j2) = jacobian_pair(&session.pass, pixel()?)?;
            let (n1, n2) = joint_normalize(&j1.values, &j2.values)?;
            let pick = if artifact == "jacobian_x1.png" { n1 } else { n2 };
            encode_gray_png(&gamma_correct(&pick, display.gamma_corr1)?)?
        }
        "guidance_x1.png" | "guidance_x2.png" => {
            let g = cached(&session)?;
            let (n1, n2) = joint_normalize(&g.0.values, &g.1.values)?;
            let pick = if artifact == "guidance_x1.png" { n1 } else { n2 };
            encode_gray_png(&gamma_correct(&pick, display.gamma_corr2)?)?
        }
        "guidance_rgb.png" => {
            let g = cached(&session)?;
            guidance_rgb(&g.0, &g.1, &session.fused)?.to_png()?
        }
        "scatter.csv" => {
            let g = cached(&session)?;
            let radius = q.radius.unwrap_or(DEFAULT_NEIGHBORHOOD_RADIUS);
            let data = scatter_data(&g.0, &g.1, pixel()?, radius)?;
            let mut out = Vec::new();
            write_scatter_csv(&data, &mut out)?;
            return Ok(([(header::CONTENT_TYPE, "text/csv")], out).into_response());
        }
        other => return Err(ServiceError::NotFound(format!("artifact {other:?}"))),
    };
    Ok(png(bytes))
}

#[derive(Deserialize)]
struct BenchQuery {
    hovers: Option<usize>,
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub model: String,
    pub height: usize,
    pub width: usize,
    pub hovers: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub fps: f64,
}

/// Times `hovers` end-to-end hover computations (backward pass, display
/// encoding) at random principle pixels.
pub fn run_bench(session: &Session, hovers: usize, seed: u64) -> ApiResult<BenchReport> {
    if hovers == 0 {
        return Err(ServiceError::BadRequest("hovers must be positive".into()));
    }
    let n = session.pass.shape.n();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut times = Vec::with_capacity(hovers);
    for _ in 0..hovers {
        let i = rng.random_range(1..=n);
        let t = std::time::Instant::now();
        std::hint::black_box(hover(session, i)?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean = times.iter().sum::<f64>() / hovers as f64;
    times.sort_by(f64::total_cmp);
    Ok(BenchReport {
        model: session.kind.name().into(),
        height: session.pass.shape.height,
        width: session.pass.shape.width,
        hovers,
        mean_ms: mean,
        median_ms: times[hovers / 2],
        fps: 1e3 / mean,
    })
}

async fn bench(State(app): App, Path(id): Path<String>, Query(q): Query<BenchQuery>) -> ApiResult<Json<BenchReport>> {
    let session = app.session(&id)?;
    let report = blocking(move || run_bench(&session, q.hovers.unwrap_or(100), q.seed.unwrap_or(0))).await?;
    Ok(Json(report))
}
