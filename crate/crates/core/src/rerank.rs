//! Second-stage reranking: score the top first-stage candidates with a
//! pluggable (query, document text) scorer and keep the best few.

use std::collections::HashSet;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexindex::analyze;
use crate::ranking::{compare_scored, top_k_by, RankedList, ScoredDoc};
use crate::remote::{http_client, join_url, post_json, RemoteError};

pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("scorer failed: {0}")]
    ScorerFailure(#[from] RemoteError),
    #[error("scorer returned non-finite score for `{0}`")]
    NonFiniteScore(String),
    #[error("candidate `{0}` carries no document text")]
    MissingText(String),
    #[error("invalid rerank config: {0}")]
    InvalidConfig(String),
}

/// Document text as shipped to a scorer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocText {
    pub url: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub doc_id: String,
    pub text: DocText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerKind {
    Builtin,
    Remote { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    pub first_stage_depth: usize,
    pub output_size: usize,
    pub scorer: ScorerKind,
    pub batch_size: usize,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            first_stage_depth: 1000,
            output_size: 10,
            scorer: ScorerKind::Builtin,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<(), RerankError> {
        if self.output_size == 0 || self.output_size > self.first_stage_depth {
            return Err(RerankError::InvalidConfig(format!(
                "need 0 < output_size ({}) <= first_stage_depth ({})",
                self.output_size, self.first_stage_depth
            )));
        }
        if self.batch_size == 0 {
            return Err(RerankError::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Scores (query, document) pairs. Must be deterministic for fixed inputs.
#[async_trait]
pub trait Scorer: Send + Sync {
    async fn score_batch(&self, query: &str, docs: &[Candidate]) -> Result<Vec<f64>, RerankError>;
}

/// Fraction of distinct query tokens present in the document's title and body.
pub fn overlap_scorer(query: &str, doc: &DocText) -> f64 {
    let q: HashSet<String> = analyze(query).into_iter().collect();
    if q.is_empty() {
        return 0.0;
    }
    let d: HashSet<String> = analyze(&format!("{} {}", doc.title, doc.body))
        .into_iter()
        .collect();
    q.intersection(&d).count() as f64 / q.len() as f64
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapScorer;

#[async_trait]
impl Scorer for OverlapScorer {
    async fn score_batch(&self, query: &str, docs: &[Candidate]) -> Result<Vec<f64>, RerankError> {
        Ok(docs.iter().map(|d| overlap_scorer(query, &d.text)).collect())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub query: String,
    pub docs: Vec<DocText>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

/// Scores `docs` against a `POST /score` endpoint in sequential batches,
/// returning one score per doc in input order.
pub async fn remote_score_batch(
    client: &reqwest::Client,
    endpoint: &str,
    query: &str,
    docs: &[DocText],
    batch_size: usize,
) -> Result<Vec<f64>, RemoteError> {
    let url = join_url(endpoint, "score");
    let mut scores = Vec::with_capacity(docs.len());
    for batch in docs.chunks(batch_size.max(1)) {
        let req = ScoreRequest {
            query: query.to_string(),
            docs: batch.to_vec(),
        };
        let resp: ScoreResponse = post_json(client, &url, &req).await?;
        if resp.scores.len() != batch.len() {
            return Err(RemoteError::ShapeMismatch {
                expected: batch.len(),
                got: resp.scores.len(),
            });
        }
        scores.extend(resp.scores);
    }
    Ok(scores)
}

#[derive(Debug, Clone)]
pub struct RemoteScorer {
    client: reqwest::Client,
    endpoint: String,
    batch_size: usize,
}

impl RemoteScorer {
    pub fn new(endpoint: impl Into<String>, batch_size: usize, timeout: Duration) -> Self {
        Self {
            client: http_client(timeout),
            endpoint: endpoint.into(),
            batch_size,
        }
    }
}

#[async_trait]
impl Scorer for RemoteScorer {
    async fn score_batch(&self, query: &str, docs: &[Candidate]) -> Result<Vec<f64>, RerankError> {
        let texts: Vec<DocText> = docs.iter().map(|c| c.text.clone()).collect();
        Ok(remote_score_batch(&self.client, &self.endpoint, query, &texts, self.batch_size).await?)
    }
}

fn candidate_from(doc: &ScoredDoc) -> Result<Candidate, RerankError> {
    let body = doc
        .body
        .clone()
        .ok_or_else(|| RerankError::MissingText(doc.doc_id.clone()))?;
    Ok(Candidate {
        doc_id: doc.doc_id.clone(),
        text: DocText {
            url: doc.url.clone().unwrap_or_default(),
            title: doc.title.clone().unwrap_or_default(),
            body,
        },
    })
}

/// Reorders the first `first_stage_depth` candidates by scorer output (ties
/// by doc id) and keeps `output_size`. First-stage scores are carried in
/// `first_stage_score` and play no part in the order.
pub async fn rerank_candidates(
    query: &str,
    candidates: &RankedList,
    cfg: &RerankConfig,
    scorer: &dyn Scorer,
) -> Result<RankedList, RerankError> {
    cfg.validate()?;
    let pool = &candidates.entries[..candidates.len().min(cfg.first_stage_depth)];
    if pool.is_empty() {
        return Ok(RankedList::new(candidates.query_id.clone(), Vec::new()));
    }
    let inputs: Vec<Candidate> = pool.iter().map(candidate_from).collect::<Result<_, _>>()?;
    let scores = scorer.score_batch(query, &inputs).await?;
    if scores.len() != inputs.len() {
        return Err(RemoteError::ShapeMismatch {
            expected: inputs.len(),
            got: scores.len(),
        }
        .into());
    }
    let mut rescored = Vec::with_capacity(pool.len());
    for (doc, score) in pool.iter().zip(scores) {
        if !score.is_finite() {
            return Err(RerankError::NonFiniteScore(doc.doc_id.clone()));
        }
        rescored.push(ScoredDoc {
            score,
            first_stage_score: Some(doc.score),
            body: None,
            ..doc.clone()
        });
    }
    let entries = top_k_by(rescored, cfg.output_size, compare_scored);
    Ok(RankedList::new(candidates.query_id.clone(), entries))
}
