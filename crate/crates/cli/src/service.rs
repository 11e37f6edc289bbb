//! Local HTTP service behind the curation UI.
//!
//! Reads run concurrently under a shared lock. Selections take the write
//! lock briefly; a recluster snapshots the curation state, runs K-Medoids
//! without holding any lock, then swaps the result in.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::handler::HandlerWithoutStateExt;
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use protorbf_core::active::rank_candidates;
use protorbf_core::clustering::{ClusteringError, PrototypeSet};
use protorbf_core::store::{CurationLog, Decision, SegmentIndex, StoreError};
use protorbf_core::{select_prototypes, DatasetManifest, EmbeddingStore, RbfModel, SegmentKey};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::error::{CliError, Result};
use crate::workspace::{Stage, Workspace};

const DEFAULT_LIMIT: usize = 20;

struct Curation {
    log: CurationLog,
    prototypes: Option<PrototypeSet>,
}

pub struct AppState {
    ws: Workspace,
    manifest: DatasetManifest,
    segments: SegmentIndex,
    store: Arc<EmbeddingStore>,
    concept_classes: Arc<HashMap<SegmentKey, usize>>,
    model: Option<RbfModel>,
    k_per_class: usize,
    seed: u64,
    curation: RwLock<Curation>,
    reclustering: AtomicBool,
}

impl AppState {
    /// Loads everything the endpoints need from a workspace that has at
    /// least been segmented and embedded.
    pub fn load(ws: Workspace, k_per_class: usize, seed: u64) -> Result<Arc<Self>> {
        let run = ws.run()?;
        ws.require_done("curate", &run, Stage::Curated.predecessors())?;
        let manifest = ws.manifest()?;
        let segments = ws.segments()?;
        let store = ws.embeddings()?;
        let concept_classes = ws.concept_classes(&manifest, &segments);
        let log = ws.curation_log(&manifest, &segments)?;
        let prototypes = if run.is_complete(Stage::Clustered) { Some(ws.prototypes()?) } else { None };
        let model = if run.is_complete(Stage::Trained) { Some(ws.model()?) } else { None };
        Ok(Arc::new(Self {
            ws,
            manifest,
            segments,
            store: Arc::new(store),
            concept_classes: Arc::new(concept_classes),
            model,
            k_per_class,
            seed,
            curation: RwLock::new(Curation { log, prototypes }),
            reclustering: AtomicBool::new(false),
        }))
    }

    fn crop_url(&self, key: &SegmentKey) -> Option<String> {
        let rec = self.segments.get(key)?;
        let name = rec.crop_path.file_name()?.to_string_lossy();
        Some(format!("/crops/{name}"))
    }

    fn prototype_summaries(&self, set: &PrototypeSet) -> Vec<Value> {
        set.prototypes
            .iter()
            .enumerate()
            .map(|(ordinal, p)| {
                json!({
                    "ordinal": ordinal,
                    "class_index": p.class_index,
                    "class": set.classes.get(p.class_index),
                    "source_segment": p.source_segment,
                    "crop_url": self.crop_url(&p.source_segment),
                })
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, msg: impl std::fmt::Display) -> Self {
        Self {
            status,
            body: json!({ "error": msg.to_string() }),
        }
    }

    fn internal(err: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, err)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T = Json<Value>> = std::result::Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let crops = ServeDir::new(state.ws.crops_dir());
    let ui = ServeDir::new(state.ws.ui_dir()).fallback(ui_placeholder.into_service());
    Router::new()
        .route("/api/status", get(status))
        .route("/api/candidates", get(candidates))
        .route("/api/selections", post(selections))
        .route("/api/recluster", post(recluster))
        .route("/api/prototypes", get(prototypes))
        .route("/api/explanations/{image_id}", get(explanation))
        .nest_service("/crops", crops)
        .fallback_service(ui)
        .with_state(state)
}

/// Serves until Ctrl-C, on 127.0.0.1 only.
pub fn serve_blocking(state: Arc<AppState>, port: u16) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::io("tokio runtime"))?;
    rt.block_on(async move {
        let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(CliError::io(addr.to_string()))?;
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(CliError::io(addr.to_string()))
    })
}

async fn ui_placeholder() -> Html<&'static str> {
    Html(
        "<!doctype html><title>protorbf</title>\
         <p>The curation UI is not built. Place its assets in the workspace <code>ui/</code> \
         directory, or drive curation through <code>/api</code>.</p>",
    )
}

async fn status(State(s): State<Arc<AppState>>) -> ApiResult {
    let run = s.ws.run().map_err(ApiError::internal)?;
    let cur = s.curation.read().expect("lock poisoned");
    let state = cur.log.state();
    let mut undecided = vec![0usize; s.manifest.classes.len()];
    for (key, &c) in s.concept_classes.iter() {
        if state.decision(key) == Decision::Undecided {
            undecided[c] += 1;
        }
    }
    Ok(Json(json!({
        "workspace": s.ws.root(),
        "dataset": s.manifest.name,
        "classes": s.manifest.classes,
        "revision": state.revision(),
        "concept_pool": s.concept_classes.len(),
        "accepted_per_class": state.accepted_per_class(),
        "undecided_per_class": undecided,
        "stages": run.stages.keys().collect::<Vec<_>>(),
        "k_per_class": s.k_per_class,
        "prototypes": cur.prototypes.as_ref().map(PrototypeSet::len),
        "model": s.model.is_some(),
        "recluster_in_progress": s.reclustering.load(Ordering::SeqCst),
    })))
}

#[derive(Debug, Deserialize)]
struct CandidateQuery {
    class: Option<String>,
    limit: Option<usize>,
}

async fn candidates(State(s): State<Arc<AppState>>, Query(q): Query<CandidateQuery>) -> ApiResult {
    let class = q
        .class
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing query parameter `class`"))?;
    let class_index = s
        .manifest
        .class_index(&class)
        .or_else(|| class.parse::<usize>().ok().filter(|&c| c < s.manifest.classes.len()))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown class {class:?}")))?;
    let limit = q.limit.unwrap_or(DEFAULT_LIMIT);

    let queue = {
        let cur = s.curation.read().expect("lock poisoned");
        rank_candidates(
            cur.log.state(),
            s.model.as_ref(),
            &s.store,
            &s.concept_classes,
            s.manifest.classes.len(),
        )
        .map_err(ApiError::internal)?
    };
    let cq = queue.class(class_index).expect("one queue per class");
    let items: Vec<Value> = cq
        .candidates
        .iter()
        .take(limit)
        .map(|c| {
            json!({
                "segment_key": c.segment_key,
                "class_index": c.class_index,
                "score": c.score,
                "crop_url": s.crop_url(&c.segment_key),
            })
        })
        .collect();
    Ok(Json(json!({
        "class": s.manifest.classes[class_index],
        "class_index": class_index,
        "acquisition": cq.acquisition,
        "total": cq.candidates.len(),
        "candidates": items,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Selection {
    segment_key: SegmentKey,
    decision: Decision,
}

async fn selections(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let sel: Selection = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed selection: {e}")))?;
    let mut cur = s.curation.write().expect("lock poisoned");
    let state = cur.log.record(&sel.segment_key, sel.decision).map_err(|e| match e {
        StoreError::UnknownSegment(k) => ApiError::new(StatusCode::NOT_FOUND, format!("unknown segment {k}")),
        other => ApiError::internal(other),
    })?;
    Ok(Json(json!({
        "revision": state.revision(),
        "segment_key": sel.segment_key,
        "decision": sel.decision,
        "accepted_per_class": state.accepted_per_class(),
    })))
}

/// Clears the busy flag however the recluster ends.
struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

async fn recluster(State(s): State<Arc<AppState>>) -> ApiResult {
    if s.reclustering.swap(true, Ordering::SeqCst) {
        return Err(ApiError::new(StatusCode::CONFLICT, "a recluster is already in progress"));
    }
    let worker = Arc::clone(&s);
    let result = tokio::task::spawn_blocking(move || {
        let _busy = BusyGuard(&worker.reclustering);
        run_recluster(&worker)
    })
    .await
    .map_err(ApiError::internal)?;
    result
}

fn run_recluster(s: &AppState) -> ApiResult {
    let snapshot = s.curation.read().expect("lock poisoned").log.state().clone();
    let set = select_prototypes(
        &s.store,
        &snapshot,
        &s.concept_classes,
        &s.manifest.classes,
        s.k_per_class,
        s.seed,
    )
    .map_err(|e| match e {
        ClusteringError::InsufficientPool(shortfall) => {
            let msg = ClusteringError::InsufficientPool(shortfall.clone()).to_string();
            ApiError {
                status: StatusCode::BAD_REQUEST,
                body: json!({ "error": msg, "shortfall": shortfall }),
            }
        }
        other => ApiError::internal(other),
    })?;

    set.write(&s.ws.prototypes_path()).map_err(ApiError::internal)?;
    let config = json!({
        "revision": snapshot.revision(),
        "accepted_per_class": snapshot.accepted_per_class(),
    });
    s.ws.mark(Stage::Curated, config).map_err(ApiError::internal)?;
    s.ws.mark(
        Stage::Clustered,
        json!({
            "k_per_class": s.k_per_class,
            "seed": s.seed,
            "revision": snapshot.revision(),
            "silhouette": set.silhouette,
        }),
    )
    .map_err(ApiError::internal)?;

    let body = json!({
        "revision": snapshot.revision(),
        "k_per_class": set.k_per_class,
        "sigma_default": set.sigma_default,
        "silhouette": set.silhouette,
        "prototypes": s.prototype_summaries(&set),
    });
    s.curation.write().expect("lock poisoned").prototypes = Some(set);
    Ok(Json(body))
}

async fn prototypes(State(s): State<Arc<AppState>>) -> ApiResult {
    let cur = s.curation.read().expect("lock poisoned");
    let set = cur
        .prototypes
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no prototypes yet; POST /api/recluster first"))?;
    Ok(Json(json!({
        "classes": set.classes,
        "k_per_class": set.k_per_class,
        "sigma_default": set.sigma_default,
        "extractor_tag": set.extractor_tag,
        "silhouette": set.silhouette,
        "prototypes": s.prototype_summaries(set),
    })))
}

async fn explanation(State(s): State<Arc<AppState>>, Path(image_id): Path<String>) -> ApiResult {
    let model = s
        .model
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no trained model in this workspace"))?;
    let mut rows: Vec<(u32, usize)> = s
        .store
        .index()
        .iter()
        .enumerate()
        .filter(|(_, k)| k.image_id == image_id)
        .map(|(r, k)| (k.segment_index, r))
        .collect();
    if rows.is_empty() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown image {image_id:?}")));
    }
    rows.sort_unstable();
    let vectors: Vec<Vec<f64>> = rows.iter().map(|&(_, r)| s.store.row_f64(r)).collect();
    let e = model.explain(&vectors).map_err(ApiError::internal)?;
    let classes = model.classes();
    let segments: Vec<Value> = e
        .per_segment
        .iter()
        .map(|seg| {
            let key = SegmentKey::new(image_id.clone(), rows[seg.segment_index].0);
            let top = &seg.top_prototype;
            json!({
                "segment_key": key,
                "crop_url": s.crop_url(&key),
                "probabilities": seg.probabilities,
                "activations": seg.activations,
                "top_prototype": {
                    "ordinal": top.ordinal,
                    "class_index": top.class_index,
                    "class": classes[top.class_index],
                    "activation": top.activation,
                    "source_segment": top.source_segment,
                    "crop_url": s.crop_url(&top.source_segment),
                },
            })
        })
        .collect();
    Ok(Json(json!({
        "image_id": image_id,
        "predicted_class": e.predicted_class,
        "class": classes[e.predicted_class],
        "image_probabilities": e.image_probabilities,
        "segments": segments,
    })))
}
