//! HTTP annotation service.
//!
//! Serves a decimated reference cloud and a random candidate subset, collects
//! per-point class assignments and writes them as an `SQNL` file on commit.
//! Candidate ids are indices into the full cloud. Label writes and commits go
//! through one lock, so they are applied in arrival order and every accepted
//! write bumps the revision counter by one.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sqn_core::pointcloud::io::encode_sqnc;
use sqn_core::pointcloud::{grid_downsample, random_downsample};
use sqn_core::weak_labels::{export_label_file, SparseLabelSet};
use sqn_core::{ClassId, PointCloud};
use tokio::sync::RwLock;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Fraction of points offered for annotation.
    pub ratio: f64,
    pub seed: u64,
    /// Grid cell of the reference cloud, meters.
    pub reference_cell: f64,
    pub class_names: Vec<String>,
    /// Destination of `POST /commit`.
    pub labels_out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointLabel {
    pub id: u64,
    pub class: u16,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelBatch {
    pub points: Vec<PointLabel>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelState {
    pub revision: u64,
    pub points: Vec<PointLabel>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Meta {
    pub n: u64,
    pub c: u16,
    pub ratio: f64,
    pub class_names: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CommitReceipt {
    pub revision: u64,
    pub labels: u64,
    pub path: String,
}

#[derive(Default)]
struct Labels {
    revision: u64,
    by_id: BTreeMap<usize, ClassId>,
}

struct Shared {
    n: usize,
    num_classes: u16,
    config: ServiceConfig,
    reference: Vec<u8>,
    candidates: Vec<u8>,
    candidate_ids: Vec<usize>,
    candidate_set: HashSet<usize>,
    labels: RwLock<Labels>,
}

/// Build the router for `cloud`. The cloud is read once and never modified;
/// ground-truth labels, if any, are not exposed.
pub fn router(cloud: &PointCloud, config: ServiceConfig) -> anyhow::Result<Router> {
    anyhow::ensure!(cloud.num_classes() > 0, "the cloud must declare its class count");
    anyhow::ensure!(
        config.class_names.is_empty() || config.class_names.len() == cloud.num_classes() as usize,
        "{} class names for {} classes",
        config.class_names.len(),
        cloud.num_classes()
    );
    let unlabeled = |c: &PointCloud| PointCloud::new(c.positions().to_vec(), c.colors().map(<[_]>::to_vec), None, 0);
    let reference = grid_downsample(cloud, config.reference_cell)?.sampled;
    let (candidates, candidate_ids) = random_downsample(cloud, config.ratio, config.seed)?;
    let mut config = config;
    if config.class_names.is_empty() {
        config.class_names = (0..cloud.num_classes()).map(|c| format!("class{c}")).collect();
    }
    let shared = Shared {
        n: cloud.len(),
        num_classes: cloud.num_classes(),
        reference: encode_sqnc(&unlabeled(&reference)?),
        candidates: encode_sqnc(&unlabeled(&candidates)?),
        candidate_set: candidate_ids.iter().copied().collect(),
        candidate_ids,
        config,
        labels: RwLock::new(Labels::default()),
    };
    Ok(Router::new()
        .route("/meta", get(meta))
        .route("/cloud/reference", get(reference_cloud))
        .route("/cloud/candidates", get(candidate_cloud))
        .route("/cloud/candidates/ids", get(candidate_id_list))
        .route("/labels", get(get_labels).post(post_labels))
        .route("/commit", post(commit))
        .with_state(Arc::new(shared)))
}

type AppState = State<Arc<Shared>>;

fn reject(status: StatusCode, reason: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": reason.into() }))).into_response()
}

fn sqnc(bytes: &[u8]) -> Response {
    ([(header::CONTENT_TYPE, "application/octet-stream")], bytes.to_vec()).into_response()
}

async fn meta(State(s): AppState) -> Json<Meta> {
    Json(Meta {
        n: s.n as u64,
        c: s.num_classes,
        ratio: s.config.ratio,
        class_names: s.config.class_names.clone(),
    })
}

async fn reference_cloud(State(s): AppState) -> Response {
    sqnc(&s.reference)
}

async fn candidate_cloud(State(s): AppState) -> Response {
    sqnc(&s.candidates)
}

/// Candidate ids in the order of the `/cloud/candidates` payload.
async fn candidate_id_list(State(s): AppState) -> Json<Vec<u64>> {
    Json(s.candidate_ids.iter().map(|&i| i as u64).collect())
}

async fn get_labels(State(s): AppState) -> Json<LabelState> {
    let labels = s.labels.read().await;
    Json(LabelState {
        revision: labels.revision,
        points: labels
            .by_id
            .iter()
            .map(|(&id, &class)| PointLabel { id: id as u64, class })
            .collect(),
    })
}

/// Validates the whole batch first; a single bad entry rejects all of it.
async fn post_labels(State(s): AppState, body: Result<Json<LabelBatch>, axum::extract::rejection::JsonRejection>) -> Response {
    let Json(batch) = match body {
        Ok(b) => b,
        Err(e) => return reject(StatusCode::BAD_REQUEST, e.body_text()),
    };
    for p in &batch.points {
        if p.class >= s.num_classes {
            return reject(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("point {}: class {} is not below {}", p.id, p.class, s.num_classes),
            );
        }
        if !usize::try_from(p.id).is_ok_and(|id| s.candidate_set.contains(&id)) {
            return reject(StatusCode::UNPROCESSABLE_ENTITY, format!("point {} is not a candidate", p.id));
        }
    }
    let mut labels = s.labels.write().await;
    for p in &batch.points {
        labels.by_id.insert(p.id as usize, p.class);
    }
    labels.revision += 1;
    Json(serde_json::json!({ "revision": labels.revision, "accepted": batch.points.len() })).into_response()
}

async fn commit(State(s): AppState) -> Response {
    // Hold the write lock so no label batch lands between snapshot and write.
    let labels = s.labels.write().await;
    let pairs: Vec<(usize, ClassId)> = labels.by_id.iter().map(|(&i, &c)| (i, c)).collect();
    let count = pairs.len() as u64;
    let result = SparseLabelSet::new(pairs, s.n, s.num_classes, s.config.seed)
        .and_then(|set| export_label_file(&set, &s.config.labels_out));
    match result {
        Ok(()) => Json(CommitReceipt {
            revision: labels.revision,
            labels: count,
            path: s.config.labels_out.display().to_string(),
        })
        .into_response(),
        Err(e) => reject(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Serve on `addr` until Ctrl-C.
pub async fn serve(router: Router, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("annotation service on http://{}", listener.local_addr()?);
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
