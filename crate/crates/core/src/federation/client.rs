use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;

use super::http::{AggregatorSearchResponse, RerankResponse, ShardSearchResponse, ShardStatsResponse};
use super::{LatencySummary, SearchMode, StatsMode};
use super::{Shard, ShardError, ShardQuery, StoredDoc, DEFAULT_SHARD_TIMEOUT};
use crate::lexindex::CorpusStats;
use crate::ranking::ScoredDoc;
use crate::remote::{get_json, http_client, join_url, RemoteError};

/// A shard reached over its HTTP API.
#[derive(Debug, Clone)]
pub struct RemoteShard {
    base_url: String,
    client: reqwest::Client,
}

impl RemoteShard {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_timeout(base_url, DEFAULT_SHARD_TIMEOUT)
    }

    pub fn with_timeout(base_url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            base_url: base_url.into(),
            client: http_client(timeout),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }
}

#[async_trait]
impl Shard for RemoteShard {
    fn name(&self) -> String {
        self.base_url.clone()
    }

    async fn search(&self, q: &ShardQuery) -> Result<Vec<ScoredDoc>, ShardError> {
        let params = [
            ("q", q.q.clone()),
            ("k", q.k.to_string()),
            ("mode", q.mode.to_string()),
            ("field", q.field.to_string()),
            ("stats", q.stats.to_string()),
            ("body", q.with_body.to_string()),
        ];
        let resp: ShardSearchResponse =
            get_json(&self.client, &join_url(&self.base_url, "search"), &params)
                .await
                .map_err(|e| match e {
                    RemoteError::Upstream { status: 409, .. } => ShardError::GlobalStatsUnavailable,
                    other => ShardError::Remote(other),
                })?;
        Ok(resp
            .results
            .into_iter()
            .map(|h| {
                let mut d = h.into_scored();
                d.shard = 0;
                d
            })
            .collect())
    }

    async fn fetch_doc(&self, doc_id: &str) -> Result<Option<StoredDoc>, ShardError> {
        // doc ids may contain reserved characters; encode as one path segment
        let mut url = reqwest::Url::parse(&join_url(&self.base_url, "doc/"))
            .map_err(|e| ShardError::BadRequest(e.to_string()))?;
        url.path_segments_mut()
            .map_err(|_| ShardError::BadRequest("base url cannot take a path".into()))?
            .pop_if_empty()
            .push(doc_id);
        match get_json::<StoredDoc>(&self.client, url.as_str(), &[]).await {
            Ok(doc) => Ok(Some(doc)),
            Err(RemoteError::Upstream { status: 404, .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    async fn corpus_stats(&self) -> Result<CorpusStats, ShardError> {
        let resp: ShardStatsResponse = get_json(
            &self.client,
            &join_url(&self.base_url, "stats"),
            &[("full", "true".to_string())],
        )
        .await?;
        resp.corpus
            .ok_or_else(|| ShardError::Internal(format!("{} publishes no term statistics", self.base_url)))
    }

    async fn publish_global_stats(&self, stats: Arc<CorpusStats>) -> Result<(), ShardError> {
        let url = join_url(&self.base_url, "global-stats");
        let resp = self
            .client
            .post(url)
            .json(stats.as_ref())
            .send()
            .await
            .map_err(RemoteError::from)?;
        if !resp.status().is_success() {
            let status = resp.status().as_u16();
            let body = resp.text().await.unwrap_or_default();
            return Err(RemoteError::Upstream { status, body }.into());
        }
        Ok(())
    }
}

/// Client for a running aggregator service.
#[derive(Debug, Clone)]
pub struct AggregatorClient {
    base_url: String,
    client: reqwest::Client,
}

impl AggregatorClient {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            base_url: base_url.into(),
            client: http_client(timeout),
        }
    }

    pub async fn search(&self, q: &ShardQuery) -> Result<AggregatorSearchResponse, RemoteError> {
        let params = [
            ("q", q.q.clone()),
            ("k", q.k.to_string()),
            ("mode", q.mode.to_string()),
            ("field", q.field.to_string()),
            ("stats", q.stats.to_string()),
        ];
        get_json(&self.client, &join_url(&self.base_url, "search"), &params).await
    }

    /// `scorer` is `builtin` or `remote`.
    pub async fn rerank(
        &self,
        query: &str,
        depth: usize,
        out: usize,
        scorer: &str,
        first_stage: SearchMode,
        stats: StatsMode,
    ) -> Result<RerankResponse, RemoteError> {
        let params = [
            ("q", query.to_string()),
            ("depth", depth.to_string()),
            ("out", out.to_string()),
            ("scorer", scorer.to_string()),
            ("first_stage", first_stage.to_string()),
            ("stats", stats.to_string()),
        ];
        get_json(&self.client, &join_url(&self.base_url, "rerank"), &params).await
    }

    pub async fn latency(&self) -> Result<LatencySummary, RemoteError> {
        get_json(&self.client, &join_url(&self.base_url, "latency"), &[]).await
    }
}
