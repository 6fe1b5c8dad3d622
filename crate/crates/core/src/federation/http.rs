//! HTTP services for shards and the aggregator.
//!
//! Shard: `GET /search`, `GET /doc/{docid}`, `GET /stats`, `POST /global-stats`,
//! `GET /health`. Aggregator: `GET /search`, `GET /rerank`, `GET /latency`,
//! `GET /health`.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{
    Aggregator, FederationError, SearchMode, Shard, ShardError, ShardFailure, ShardQuery, ShardTiming,
    StatsMode,
};
use crate::lexindex::{CorpusStats, Field};
use crate::ranking::ScoredDoc;
use crate::rerank::{OverlapScorer, RemoteScorer, RerankConfig, RerankError, Scorer};

pub const DEFAULT_K: usize = 10;

/// One result row on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireHit {
    pub docid: String,
    pub score: f64,
    #[serde(default)]
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shard: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_stage_score: Option<f64>,
}

impl WireHit {
    pub fn from_scored(d: ScoredDoc, with_shard: bool) -> Self {
        Self {
            docid: d.doc_id,
            score: d.score,
            url: d.url.unwrap_or_default(),
            title: d.title.unwrap_or_default(),
            body: d.body,
            shard: with_shard.then_some(d.shard),
            first_stage_score: d.first_stage_score,
        }
    }

    pub fn into_scored(self) -> ScoredDoc {
        ScoredDoc {
            doc_id: self.docid,
            score: self.score,
            shard: self.shard.unwrap_or(0),
            url: Some(self.url),
            title: Some(self.title),
            body: self.body,
            first_stage_score: self.first_stage_score,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardSearchResponse {
    pub results: Vec<WireHit>,
    pub took_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeStats {
    #[serde(rename = "N")]
    pub n: u64,
    pub avgdl: f64,
    pub df_available: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardStatsResponse {
    pub mode_stats: ModeStats,
    /// Full per-field statistics, present when requested with `full=true`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregatorSearchResponse {
    pub query: String,
    pub results: Vec<WireHit>,
    pub degraded: bool,
    pub failed_shards: Vec<ShardFailure>,
    pub shards: Vec<ShardTiming>,
    pub took_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RerankResponse {
    pub query: String,
    pub results: Vec<WireHit>,
    pub candidates: usize,
    pub degraded: bool,
    pub failed_shards: Vec<ShardFailure>,
    pub took_ms: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

impl From<ShardError> for ApiError {
    fn from(e: ShardError) -> Self {
        let status = match e {
            ShardError::BadRequest(_) | ShardError::Unsupported(_) => StatusCode::BAD_REQUEST,
            ShardError::GlobalStatsUnavailable => StatusCode::CONFLICT,
            ShardError::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
            ShardError::Remote(_) => StatusCode::BAD_GATEWAY,
            ShardError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<FederationError> for ApiError {
    fn from(e: FederationError) -> Self {
        match e {
            FederationError::Shard(inner) => inner.into(),
            FederationError::Rerank(RerankError::InvalidConfig(msg)) => {
                ApiError(StatusCode::BAD_REQUEST, msg)
            }
            other => ApiError(StatusCode::BAD_GATEWAY, other.to_string()),
        }
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

type Params = HashMap<String, String>;

fn param<T: FromStr>(params: &Params, name: &str, default: T) -> Result<T, ApiError>
where
    T::Err: std::fmt::Display,
{
    match params.get(name) {
        None => Ok(default),
        Some(raw) => raw
            .parse()
            .map_err(|e| bad_request(format!("invalid `{name}`: {e}"))),
    }
}

fn flag(params: &Params, name: &str) -> Result<bool, ApiError> {
    match params.get(name).map(String::as_str) {
        None | Some("false") | Some("0") => Ok(false),
        Some("true") | Some("1") | Some("") => Ok(true),
        Some(other) => Err(bad_request(format!("invalid `{name}`: {other}"))),
    }
}

fn required_query(params: &Params) -> Result<String, ApiError> {
    params
        .get("q")
        .cloned()
        .ok_or_else(|| bad_request("missing `q`"))
}

fn parse_shard_query(params: &Params) -> Result<ShardQuery, ApiError> {
    Ok(ShardQuery {
        q: required_query(params)?,
        k: param(params, "k", DEFAULT_K)?,
        mode: param(params, "mode", SearchMode::Lexical)?,
        field: param(params, "field", Field::Body)?,
        stats: param(params, "stats", StatsMode::PerShard)?,
        with_body: flag(params, "body")?,
    })
}

async fn health() -> &'static str {
    "ok"
}

/// Routes for a shard service.
pub fn shard_router<S: Shard + 'static>(shard: Arc<S>) -> Router {
    Router::new()
        .route("/search", get(shard_search::<S>))
        .route("/doc/{docid}", get(shard_doc::<S>))
        .route("/stats", get(shard_stats::<S>))
        .route("/global-stats", post(shard_publish::<S>))
        .route("/health", get(health))
        .with_state(shard)
}

async fn shard_search<S: Shard>(
    State(shard): State<Arc<S>>,
    Query(params): Query<Params>,
) -> Result<Json<ShardSearchResponse>, ApiError> {
    let q = parse_shard_query(&params)?;
    let t0 = Instant::now();
    let hits = shard.search(&q).await?;
    Ok(Json(ShardSearchResponse {
        results: hits.into_iter().map(|h| WireHit::from_scored(h, false)).collect(),
        took_ms: t0.elapsed().as_secs_f64() * 1000.0,
    }))
}

async fn shard_doc<S: Shard>(
    State(shard): State<Arc<S>>,
    Path(docid): Path<String>,
) -> Result<Response, ApiError> {
    match shard.fetch_doc(&docid).await? {
        Some(doc) => Ok(Json(doc).into_response()),
        None => Err(ApiError(StatusCode::NOT_FOUND, format!("document `{docid}` not found"))),
    }
}

async fn shard_stats<S: Shard>(
    State(shard): State<Arc<S>>,
    Query(params): Query<Params>,
) -> Result<Json<ShardStatsResponse>, ApiError> {
    let full = flag(&params, "full")?;
    let field: Field = param(&params, "field", Field::Body)?;
    let resp = match shard.corpus_stats().await {
        Ok(corpus) => {
            let fs = corpus.fields.get(&field).cloned().unwrap_or_default();
            ShardStatsResponse {
                mode_stats: ModeStats {
                    n: fs.doc_count,
                    avgdl: fs.avgdl(),
                    df_available: true,
                },
                corpus: full.then_some(corpus),
            }
        }
        Err(ShardError::Unsupported(_)) => ShardStatsResponse {
            mode_stats: ModeStats {
                n: 0,
                avgdl: 0.0,
                df_available: false,
            },
            corpus: None,
        },
        Err(e) => return Err(e.into()),
    };
    Ok(Json(resp))
}

async fn shard_publish<S: Shard>(
    State(shard): State<Arc<S>>,
    Json(stats): Json<CorpusStats>,
) -> Result<StatusCode, ApiError> {
    shard.publish_global_stats(Arc::new(stats)).await?;
    Ok(StatusCode::NO_CONTENT)
}

/// Aggregator plus the defaults and scorers its endpoints use.
pub struct AggregatorService {
    pub aggregator: Aggregator,
    pub default_k: usize,
    pub rerank: RerankConfig,
    pub remote_scorer: Option<RemoteScorer>,
}

impl AggregatorService {
    pub fn new(aggregator: Aggregator) -> Self {
        Self {
            aggregator,
            default_k: DEFAULT_K,
            rerank: RerankConfig::default(),
            remote_scorer: None,
        }
    }
}

pub fn aggregator_router(service: Arc<AggregatorService>) -> Router {
    Router::new()
        .route("/search", get(agg_search))
        .route("/rerank", get(agg_rerank))
        .route("/latency", get(agg_latency))
        .route("/health", get(health))
        .with_state(service)
}

async fn agg_search(
    State(svc): State<Arc<AggregatorService>>,
    Query(params): Query<Params>,
) -> Result<Json<AggregatorSearchResponse>, ApiError> {
    let mut q = parse_shard_query(&params)?;
    q.k = param(&params, "k", svc.default_k)?;
    let out = svc.aggregator.search(&q).await?;
    Ok(Json(AggregatorSearchResponse {
        query: q.q,
        results: out
            .list
            .entries
            .into_iter()
            .map(|h| WireHit::from_scored(h, true))
            .collect(),
        degraded: out.degraded,
        failed_shards: out.failures,
        shards: out.timings,
        took_ms: out.took_ms,
    }))
}

async fn agg_rerank(
    State(svc): State<Arc<AggregatorService>>,
    Query(params): Query<Params>,
) -> Result<Json<RerankResponse>, ApiError> {
    let query = required_query(&params)?;
    let cfg = RerankConfig {
        first_stage_depth: param(&params, "depth", svc.rerank.first_stage_depth)?,
        output_size: param(&params, "out", svc.rerank.output_size)?,
        ..svc.rerank.clone()
    };
    let first_stage: SearchMode = param(&params, "first_stage", SearchMode::Lexical)?;
    let stats: StatsMode = param(&params, "stats", StatsMode::PerShard)?;
    let scorer: &dyn Scorer = match params.get("scorer").map(String::as_str) {
        None | Some("builtin") => &OverlapScorer,
        Some("remote") => match &svc.remote_scorer {
            Some(s) => s,
            None => return Err(bad_request("no remote scorer endpoint configured")),
        },
        Some(other) => return Err(bad_request(format!("unknown scorer `{other}`"))),
    };
    let t0 = Instant::now();
    let out = svc
        .aggregator
        .rerank(&query, first_stage, stats, &cfg, scorer)
        .await?;
    Ok(Json(RerankResponse {
        query,
        results: out
            .list
            .entries
            .into_iter()
            .map(|h| WireHit::from_scored(h, true))
            .collect(),
        candidates: out.candidates,
        degraded: out.degraded,
        failed_shards: out.failures,
        took_ms: t0.elapsed().as_secs_f64() * 1000.0,
    }))
}

async fn agg_latency(State(svc): State<Arc<AggregatorService>>) -> Result<Response, ApiError> {
    match svc.aggregator.latency().summary() {
        Ok(summary) => Ok(Json(summary).into_response()),
        Err(e) => Err(ApiError(StatusCode::NOT_FOUND, e.to_string())),
    }
}

/// Serves `router` on an already-bound listener until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router).await
}
