use std::collections::HashSet;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kgalign_core::{ExportRow, KGStats, PipelineConfig, Side, Subgraph};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{builtin_names, DatasetRef};
use crate::error::{ServiceError, ServiceResult};
use crate::manager::{mappings_between, SubmittedLabel, TaskManager};
use crate::task::{PendingItem, TaskRecord};

fn node_names(g: &Subgraph) -> HashSet<&str> {
    g.nodes.iter().map(|n| n.name.as_str()).collect()
}

/// Neighbourhoods wider than this get too large to draw.
pub const MAX_HOPS: usize = 3;

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateTask {
    pub dataset: DatasetRef,
    #[serde(default)]
    pub config: PipelineConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub task_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UncertainItems {
    pub items: Vec<PendingItem>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeedbackBody {
    #[serde(default)]
    pub labels: Vec<SubmittedLabel>,
    /// Stop asking for feedback on this task.
    #[serde(default)]
    pub decline: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Accepted {
    pub accepted: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MappingContext {
    pub left_subgraph: Subgraph,
    pub right_subgraph: Subgraph,
    pub cross_mappings: Vec<ExportRow>,
}

#[derive(Debug, Deserialize)]
struct HopsQuery {
    hops: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct PairQuery {
    left: String,
    right: String,
}

pub fn router(manager: TaskManager) -> Router {
    Router::new()
        .route("/datasets", get(list_datasets))
        .route("/tasks", post(create_task))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/uncertain", get(get_uncertain))
        .route("/tasks/{id}/feedback", post(post_feedback))
        .route("/tasks/{id}/mappings", get(get_mappings))
        .route("/tasks/{id}/mapping-context", get(get_mapping_context))
        .route("/kg/{side}/{task_id}/stats", get(get_stats))
        .route("/kg/{side}/{task_id}/entity/{entity}/neighbourhood", get(get_neighbourhood))
        .with_state(manager)
}

// Bodies are decoded by hand so malformed JSON gets the same error shape as
// every other failure.
fn decode<T: DeserializeOwned>(body: &[u8]) -> ServiceResult<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("invalid request body: {e}")))
}

fn parse_side(side: &str) -> ServiceResult<Side> {
    side.parse().map_err(|_| ServiceError::BadRequest(format!("side must be `left` or `right`, got `{side}`")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ServiceResult<T> + Send + 'static) -> ServiceResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn list_datasets(State(m): State<TaskManager>) -> Json<Vec<String>> {
    Json(builtin_names(&m.config().datasets_dir))
}

async fn create_task(State(m): State<TaskManager>, body: Bytes) -> ServiceResult<(StatusCode, Json<Created>)> {
    let request: CreateTask = decode(&body)?;
    let task_id = blocking(move || m.create_task(&request.dataset, request.config)).await?;
    Ok((StatusCode::CREATED, Json(Created { task_id })))
}

async fn get_task(State(m): State<TaskManager>, Path(id): Path<String>) -> ServiceResult<Json<TaskRecord>> {
    Ok(Json(m.get(&id)?.record()))
}

async fn get_uncertain(State(m): State<TaskManager>, Path(id): Path<String>) -> ServiceResult<Json<UncertainItems>> {
    Ok(Json(UncertainItems { items: m.get(&id)?.uncertain() }))
}

async fn post_feedback(
    State(m): State<TaskManager>,
    Path(id): Path<String>,
    body: Bytes,
) -> ServiceResult<Json<Accepted>> {
    let request: FeedbackBody = decode(&body)?;
    let handle = m.get(&id)?;
    let accepted = blocking(move || handle.submit_feedback(&request.labels, request.decline)).await?;
    Ok(Json(Accepted { accepted }))
}

async fn get_mappings(State(m): State<TaskManager>, Path(id): Path<String>) -> ServiceResult<Response> {
    let tsv = m.get(&id)?.export()?;
    let disposition = format!("attachment; filename=\"{id}.tsv\"");
    Ok((
        [(header::CONTENT_TYPE, "text/tab-separated-values; charset=utf-8".to_owned()), (header::CONTENT_DISPOSITION, disposition)],
        tsv,
    )
        .into_response())
}

async fn get_stats(
    State(m): State<TaskManager>,
    Path((side, task_id)): Path<(String, String)>,
) -> ServiceResult<Json<KGStats>> {
    let side = parse_side(&side)?;
    let handle = m.get(&task_id)?;
    let graphs = blocking(move || handle.graphs()).await?;
    Ok(Json(graphs.side(side).stats()))
}

async fn get_neighbourhood(
    State(m): State<TaskManager>,
    Path((side, task_id, entity)): Path<(String, String, String)>,
    Query(q): Query<HopsQuery>,
) -> ServiceResult<Json<Subgraph>> {
    let side = parse_side(&side)?;
    let hops = q.hops.unwrap_or(1);
    if hops > MAX_HOPS {
        return Err(ServiceError::BadRequest(format!("hops must be at most {MAX_HOPS}")));
    }
    let handle = m.get(&task_id)?;
    let graphs = blocking(move || handle.graphs()).await?;
    let kg = graphs.side(side);
    let center = kg.require_entity(&entity)?;
    Ok(Json(kg.neighbourhood(center, hops)?))
}

async fn get_mapping_context(
    State(m): State<TaskManager>,
    Path(id): Path<String>,
    Query(q): Query<PairQuery>,
) -> ServiceResult<Json<MappingContext>> {
    let handle = m.get(&id)?;
    let (graphs, rows) = blocking(move || Ok((handle.graphs()?, handle.rows()?))).await?;
    let left_subgraph = graphs.left.neighbourhood(graphs.left.require_entity(&q.left)?, 1)?;
    let right_subgraph = graphs.right.neighbourhood(graphs.right.require_entity(&q.right)?, 1)?;
    let cross_mappings =
        mappings_between(&rows, &node_names(&left_subgraph), &node_names(&right_subgraph)).into_iter().cloned().collect();
    Ok(Json(MappingContext { left_subgraph, right_subgraph, cross_mappings }))
}
