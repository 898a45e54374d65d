//! Route handlers and request/response bodies.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use rexloop_core::corpus::read_tagged;
use rexloop_core::eval::MetricsReport;
use rexloop_core::feedback::{matching_bans, BannedTrigram, ANY_RELATION};
use rexloop_core::workspace::DEFAULT_TOP_K;
use rexloop_core::{
    Hyperparams, JobStatus, RelationSchema, RoundRecord, Trigram, TrigramAttribution, Verdict, Workspace,
    WorkspaceConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::state::{start_job, AppState};

pub const DEFAULT_SAMPLES: usize = 5;
pub const MAX_SAMPLES: usize = 100;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/workspaces", get(list_workspaces).post(create_workspace))
        .route("/workspaces/{id}", get(get_workspace))
        .route("/workspaces/{id}/rounds", get(list_rounds))
        .route("/workspaces/{id}/rounds/{k}", get(get_round))
        .route("/workspaces/{id}/rounds/{k}/trigrams", get(round_trigrams))
        .route("/workspaces/{id}/rounds/{k}/metrics", get(round_metrics))
        .route("/workspaces/{id}/rounds/{k}/samples", get(round_samples))
        .route("/workspaces/{id}/verdicts", get(get_verdicts).post(post_verdicts))
        .route("/workspaces/{id}/retrain", post(retrain))
        .route("/workspaces/{id}/status", get(get_status))
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceSummary {
    pub id: String,
    pub classes: Vec<String>,
    pub negative: String,
    pub rounds: usize,
    pub status: JobStatus,
}

fn summary(ws: &Workspace) -> ApiResult<WorkspaceSummary> {
    let classes = ws.classes();
    Ok(WorkspaceSummary {
        id: ws.id().to_string(),
        classes: classes.names.clone(),
        negative: ws.config().schema.negative.clone(),
        rounds: ws.round_count()?,
        status: ws.status()?,
    })
}

async fn list_workspaces(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<WorkspaceSummary>>> {
    let mut out = Vec::new();
    for id in state.workspace_ids()? {
        out.push(summary(&state.open(&id)?)?);
    }
    Ok(Json(out))
}

/// Body of `POST /workspaces`. Datasets and schema travel as file text.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct CreateWorkspace {
    pub id: String,
    pub schema: String,
    pub train: String,
    pub test: String,
    #[serde(default)]
    pub hyper: Hyperparams,
    #[serde(default)]
    pub top_k: Option<usize>,
    /// Start the baseline round right away.
    #[serde(default = "yes")]
    pub start: bool,
}

fn yes() -> bool {
    true
}

async fn create_workspace(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateWorkspace>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<WorkspaceSummary>)> {
    let Json(body) = body?;
    let path = state
        .workspace_path(&body.id)
        .map_err(|e| ApiError::bad_request(e.message))?;
    let _guard = state.create.lock().await;
    if path.join("workspace.json").exists() {
        return Err(ApiError::conflict("exists", format!("workspace `{}` already exists", body.id)));
    }
    let schema = RelationSchema::parse(body.schema.as_bytes())?;
    let train = read_tagged(body.train.as_bytes(), Some(&schema))?;
    let test = read_tagged(body.test.as_bytes(), Some(&schema))?;
    let config = WorkspaceConfig {
        id: body.id.clone(),
        schema,
        hyper: body.hyper,
        top_k: body.top_k.unwrap_or(DEFAULT_TOP_K),
    };
    let ws = Workspace::create(&path, config, &train, &test)?;
    if body.start {
        start_job(&state, ws.clone())?;
    }
    Ok((StatusCode::CREATED, Json(summary(&ws)?)))
}

async fn get_workspace(
    State(state): State<Arc<AppState>>,
    path: Result<Path<String>, PathRejection>,
) -> ApiResult<Json<WorkspaceSummary>> {
    let Path(id) = path?;
    Ok(Json(summary(&state.open(&id)?)?))
}

async fn list_rounds(
    State(state): State<Arc<AppState>>,
    path: Result<Path<String>, PathRejection>,
) -> ApiResult<Json<Vec<RoundRecord>>> {
    let Path(id) = path?;
    Ok(Json(state.open(&id)?.rounds()?))
}

fn require_round(ws: &Workspace, k: usize) -> ApiResult<RoundRecord> {
    ws.round(k)?
        .ok_or_else(|| ApiError::not_found(format!("round {k} not found in workspace `{}`", ws.id())))
}

async fn get_round(
    State(state): State<Arc<AppState>>,
    path: Result<Path<(String, usize)>, PathRejection>,
) -> ApiResult<Json<RoundRecord>> {
    let Path((id, k)) = path?;
    Ok(Json(require_round(&state.open(&id)?, k)?))
}

fn check_relation(ws: &Workspace, relation: &str) -> ApiResult<()> {
    let known = ws.config().schema.contains(relation) || ws.classes().index_of(relation).is_some();
    if known {
        Ok(())
    } else {
        Err(ApiError::bad_request(format!("unknown relation `{relation}`")))
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct TrigramQuery {
    pub relation: Option<String>,
    pub top: Option<usize>,
}

/// Ranked trigrams of round `k`; `top` applies per relation.
async fn round_trigrams(
    State(state): State<Arc<AppState>>,
    path: Result<Path<(String, usize)>, PathRejection>,
    query: Result<Query<TrigramQuery>, QueryRejection>,
) -> ApiResult<Json<Vec<TrigramAttribution>>> {
    let Path((id, k)) = path?;
    let Query(q) = query?;
    let ws = state.open(&id)?;
    require_round(&ws, k)?;
    if let Some(relation) = &q.relation {
        check_relation(&ws, relation)?;
    }
    let mut taken: std::collections::HashMap<String, usize> = Default::default();
    let rows = ws
        .round_trigrams(k)?
        .into_iter()
        .filter(|row| match &q.relation {
            Some(r) => row.relation == *r || base_relation(&row.relation) == r,
            None => true,
        })
        .filter(|row| {
            let n = taken.entry(row.relation.clone()).or_default();
            *n += 1;
            q.top.is_none_or(|top| *n <= top)
        })
        .collect();
    Ok(Json(rows))
}

fn base_relation(class: &str) -> &str {
    class
        .strip_suffix("(e1,e2)")
        .or_else(|| class.strip_suffix("(e2,e1)"))
        .unwrap_or(class)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub metrics: MetricsReport,
    pub metrics_before: Option<MetricsReport>,
}

async fn round_metrics(
    State(state): State<Arc<AppState>>,
    path: Result<Path<(String, usize)>, PathRejection>,
) -> ApiResult<Json<RoundMetrics>> {
    let Path((id, k)) = path?;
    let record = require_round(&state.open(&id)?, k)?;
    Ok(Json(RoundMetrics {
        round: k,
        metrics: record.metrics_after,
        metrics_before: record.metrics_before,
    }))
}

#[derive(Debug, Deserialize)]
pub struct SampleQuery {
    pub relation: String,
    pub trigram: String,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub label: String,
    pub text: String,
    pub tokens: Vec<String>,
    /// Inclusive token ranges of the two entity mentions.
    pub e1: [usize; 2],
    pub e2: [usize; 2],
    /// Inclusive token range of the first trigram occurrence, clipped to the
    /// sentence when the trigram includes a boundary slot.
    pub highlight: [usize; 2],
}

/// Training sentences of round `k` that carry `trigram` and are labeled
/// with `relation`.
async fn round_samples(
    State(state): State<Arc<AppState>>,
    path: Result<Path<(String, usize)>, PathRejection>,
    query: Result<Query<SampleQuery>, QueryRejection>,
) -> ApiResult<Json<Vec<Sample>>> {
    let Path((id, k)) = path?;
    let Query(q) = query?;
    let ws = state.open(&id)?;
    require_round(&ws, k)?;
    if q.relation != ANY_RELATION {
        check_relation(&ws, &q.relation)?;
    }
    let trigram: Trigram = q
        .trigram
        .parse()
        .map_err(|e: rexloop_core::Error| ApiError::bad_request(e.to_string()))?;
    let limit = q.limit.unwrap_or(DEFAULT_SAMPLES).min(MAX_SAMPLES);
    let probe = [BannedTrigram {
        relation: q.relation.clone(),
        trigram: trigram.clone(),
    }]
    .into();
    let mut out = Vec::new();
    for example in ws.round_dataset(k)? {
        if out.len() >= limit {
            break;
        }
        if matching_bans(&example, &probe).is_empty() {
            continue;
        }
        let norms: Vec<&str> = example.sentence.norms().collect();
        let Some(t) = (0..norms.len()).find(|&t| Trigram::at(&norms, t) == trigram) else {
            continue;
        };
        out.push(Sample {
            id: example.id().to_string(),
            label: example.label_line(),
            text: example.marked_text(),
            tokens: example.sentence.tokens.iter().map(|t| t.surface.clone()).collect(),
            e1: [example.e1.start, example.e1.end],
            e2: [example.e2.start, example.e2.end],
            highlight: [t.saturating_sub(1), (t + 1).min(norms.len() - 1)],
        });
    }
    Ok(Json(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictList {
    /// Round the verdicts will filter.
    pub round: usize,
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Deserialize)]
pub struct VerdictQuery {
    pub round: Option<usize>,
}

async fn get_verdicts(
    State(state): State<Arc<AppState>>,
    path: Result<Path<String>, PathRejection>,
    query: Result<Query<VerdictQuery>, QueryRejection>,
) -> ApiResult<Json<VerdictList>> {
    let Path(id) = path?;
    let Query(q) = query?;
    let ws = state.open(&id)?;
    let round = match q.round {
        Some(r) => r,
        None => state.verdict_target(&ws)?,
    };
    Ok(Json(VerdictList {
        round,
        verdicts: ws.verdicts(round)?.into(),
    }))
}

/// Body of `POST /verdicts`. `round` is the completed round the reviewer
/// looked at; it must still be the latest one.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct SubmitVerdicts {
    pub round: usize,
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResult {
    pub round: usize,
    pub changed: bool,
    pub verdicts: Vec<Verdict>,
}

async fn post_verdicts(
    State(state): State<Arc<AppState>>,
    path: Result<Path<String>, PathRejection>,
    body: Result<Json<SubmitVerdicts>, JsonRejection>,
) -> ApiResult<Json<SubmitResult>> {
    let Path(id) = path?;
    let Json(body) = body?;
    let ws = state.open(&id)?;
    let handle = state.handle(&id);
    let _guard = handle.write.lock().await;
    let completed = ws.round_count()?;
    if completed == 0 || body.round != completed - 1 {
        return Err(ApiError::conflict(
            "stale_round",
            format!(
                "verdicts refer to round {} but the latest completed round is {}",
                body.round,
                completed.checked_sub(1).map_or("none".to_string(), |k| k.to_string())
            ),
        ));
    }
    for v in &body.verdicts {
        if v.relation != ANY_RELATION {
            check_relation(&ws, &v.relation)?;
        }
    }
    let target = state.verdict_target(&ws)?;
    let changed = ws.record_verdicts(target, body.verdicts)?;
    Ok(Json(SubmitResult {
        round: target,
        changed,
        verdicts: ws.verdicts(target)?.into(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainAccepted {
    pub round: usize,
}

async fn retrain(
    State(state): State<Arc<AppState>>,
    path: Result<Path<String>, PathRejection>,
) -> ApiResult<(StatusCode, Json<RetrainAccepted>)> {
    let Path(id) = path?;
    let ws = state.open(&id)?;
    let round = start_job(&state, ws)?;
    Ok((StatusCode::ACCEPTED, Json(RetrainAccepted { round })))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusView {
    #[serde(flatten)]
    pub status: JobStatus,
    pub rounds: usize,
}

async fn get_status(State(state): State<Arc<AppState>>, path: Result<Path<String>, PathRejection>) -> ApiResult<Json<StatusView>> {
    let Path(id) = path?;
    let ws = state.open(&id)?;
    Ok(Json(StatusView {
        status: ws.status()?,
        rounds: ws.round_count()?,
    }))
}
