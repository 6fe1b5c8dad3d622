//! Federated search over independently indexed shards.
//!
//! Each shard serves its own lexical and dense indexes. The [`Aggregator`]
//! fans a query out to every shard concurrently, merges the per-shard top-k
//! lists into a global top-k and records end-to-end latency.
//!
//! Lexical scores can be computed in two ways. In [`StatsMode::PerShard`]
//! each shard scores with its local N, df and avgdl, so scores from
//! different shards are only approximately comparable. In
//! [`StatsMode::Global`] the aggregator sums every shard's statistics once
//! and publishes the result back to the shards, after which a federated
//! search ranks exactly like a single index over the union.

mod client;
pub mod http;
mod shard;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::OnceCell;

pub use client::{AggregatorClient, RemoteShard};
pub use shard::LocalShard;

use crate::denseindex::DenseError;
use crate::embed::EmbedError;
use crate::lexindex::{CorpusStats, Field, LexError};
use crate::ranking::{compare_scored, top_k_by, RankedList, ScoredDoc};
use crate::remote::RemoteError;
use crate::rerank::{rerank_candidates, RerankConfig, RerankError, Scorer};

pub const DEFAULT_SHARD_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("document `{0}` returned by more than one shard")]
    DuplicateAcrossShards(String),
    #[error("all {} shards failed: {}", .0.len(), display_failures(.0))]
    AllShardsFailed(Vec<ShardFailure>),
    #[error("no shards configured")]
    NoShards,
    #[error("collecting global statistics failed: {0}")]
    GlobalStats(String),
    #[error("shard index {0} out of range")]
    UnknownShard(usize),
    #[error(transparent)]
    Shard(#[from] ShardError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
}

fn display_failures(failures: &[ShardFailure]) -> String {
    failures
        .iter()
        .map(|f| format!("shard {} ({}): {}", f.shard, f.name, f.error))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error, Clone)]
pub enum ShardError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("{0} search is not served by this shard")]
    Unsupported(SearchMode),
    #[error("global statistics have not been published to this shard")]
    GlobalStatsUnavailable,
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("{0}")]
    Internal(String),
    #[error(transparent)]
    Remote(#[from] RemoteError),
}

impl From<LexError> for ShardError {
    fn from(e: LexError) -> Self {
        match e {
            LexError::InvalidStats(_) => ShardError::BadRequest(e.to_string()),
            other => ShardError::Internal(other.to_string()),
        }
    }
}

impl From<DenseError> for ShardError {
    fn from(e: DenseError) -> Self {
        match e {
            DenseError::DimensionMismatch { .. } | DenseError::NonFiniteValue(_) => {
                ShardError::BadRequest(e.to_string())
            }
            other => ShardError::Internal(other.to_string()),
        }
    }
}

impl From<EmbedError> for ShardError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::EmptyText(_) => ShardError::BadRequest(e.to_string()),
            other => ShardError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    #[default]
    Lexical,
    Dense,
}

impl SearchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchMode::Lexical => "lexical",
            SearchMode::Dense => "dense",
        }
    }
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lexical" => Ok(SearchMode::Lexical),
            "dense" => Ok(SearchMode::Dense),
            other => Err(format!("unknown mode `{other}` (expected lexical or dense)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsMode {
    #[default]
    PerShard,
    Global,
}

impl StatsMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StatsMode::PerShard => "per-shard",
            StatsMode::Global => "global",
        }
    }
}

impl fmt::Display for StatsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StatsMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-shard" => Ok(StatsMode::PerShard),
            "global" => Ok(StatsMode::Global),
            other => Err(format!("unknown stats mode `{other}` (expected per-shard or global)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardQuery {
    pub q: String,
    pub k: usize,
    pub mode: SearchMode,
    pub field: Field,
    pub stats: StatsMode,
    /// Attach stored body text to every hit.
    pub with_body: bool,
}

impl ShardQuery {
    pub fn new(q: impl Into<String>, k: usize, mode: SearchMode) -> Self {
        Self {
            q: q.into(),
            k,
            mode,
            field: Field::Body,
            stats: StatsMode::PerShard,
            with_body: false,
        }
    }

    pub fn with_stats(mut self, stats: StatsMode) -> Self {
        self.stats = stats;
        self
    }

    pub fn with_field(mut self, field: Field) -> Self {
        self.field = field;
        self
    }

    pub fn with_body(mut self, with_body: bool) -> Self {
        self.with_body = with_body;
        self
    }
}

/// Stored fields of one document as served by `GET /doc/<docid>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredDoc {
    pub docid: String,
    pub segment: u32,
    pub url: String,
    pub title: String,
    pub body: String,
}

/// A search backend holding one partition of the corpus.
#[async_trait]
pub trait Shard: Send + Sync {
    fn name(&self) -> String;

    async fn search(&self, query: &ShardQuery) -> Result<Vec<ScoredDoc>, ShardError>;

    async fn fetch_doc(&self, doc_id: &str) -> Result<Option<StoredDoc>, ShardError>;

    async fn corpus_stats(&self) -> Result<CorpusStats, ShardError>;

    async fn publish_global_stats(&self, stats: Arc<CorpusStats>) -> Result<(), ShardError>;
}

/// Global top-k of several ranked lists: score descending, then doc id.
/// The result does not depend on the order of `lists`.
pub fn merge_ranked_lists(lists: &[RankedList], k: usize) -> Result<RankedList, FederationError> {
    let mut seen = HashSet::new();
    let mut all = Vec::with_capacity(lists.iter().map(RankedList::len).sum());
    for entry in lists.iter().flat_map(|l| &l.entries) {
        if !seen.insert(entry.doc_id.as_str()) {
            return Err(FederationError::DuplicateAcrossShards(entry.doc_id.clone()));
        }
        all.push(entry.clone());
    }
    let query_id = lists.first().map(|l| l.query_id.clone()).unwrap_or_default();
    Ok(RankedList::new(query_id, top_k_by(all, k, compare_scored)))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LatencyError {
    #[error("no latency samples")]
    EmptySamples,
    #[error("percentile must be in (0, 1], got {0}")]
    InvalidPercentile(String),
}

/// Nearest-rank percentile: the ceil(p * n)-th smallest sample.
pub fn latency_percentile(samples: &[Duration], p: f64) -> Result<Duration, LatencyError> {
    if samples.is_empty() {
        return Err(LatencyError::EmptySamples);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(LatencyError::InvalidPercentile(p.to_string()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    // guard against p * n landing a hair above an integer, e.g. 0.95 * 100
    let rank = ((p * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Ok(sorted[rank - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    #[serde(with = "millis")]
    pub p50: Duration,
    #[serde(with = "millis")]
    pub p95: Duration,
    #[serde(with = "millis")]
    pub max: Duration,
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1000.0)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)? / 1000.0))
    }
}

impl LatencySummary {
    pub fn from_samples(samples: &[Duration]) -> Result<Self, LatencyError> {
        Ok(Self {
            count: samples.len(),
            p50: latency_percentile(samples, 0.5)?,
            p95: latency_percentile(samples, 0.95)?,
            max: latency_percentile(samples, 1.0)?,
        })
    }
}

/// Latency samples appended concurrently by request handlers.
#[derive(Debug, Default)]
pub struct LatencyStats {
    samples: Mutex<Vec<Duration>>,
}

impl LatencyStats {
    pub fn record(&self, d: Duration) {
        self.samples.lock().expect("latency lock").push(d);
    }

    pub fn samples(&self) -> Vec<Duration> {
        self.samples.lock().expect("latency lock").clone()
    }

    pub fn summary(&self) -> Result<LatencySummary, LatencyError> {
        LatencySummary::from_samples(&self.samples())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardFailure {
    pub shard: usize,
    pub name: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardTiming {
    pub shard: usize,
    pub took_ms: f64,
    pub ok: bool,
    pub hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedResult {
    pub list: RankedList,
    /// Set when at least one shard failed and the list covers only the rest.
    pub degraded: bool,
    pub failures: Vec<ShardFailure>,
    pub timings: Vec<ShardTiming>,
    pub took_ms: f64,
}

pub struct Aggregator {
    shards: Vec<Arc<dyn Shard>>,
    timeout: Duration,
    latency: LatencyStats,
    global: OnceCell<Arc<CorpusStats>>,
}

impl Aggregator {
    pub fn new(shards: Vec<Arc<dyn Shard>>) -> Self {
        Self {
            shards,
            timeout: DEFAULT_SHARD_TIMEOUT,
            latency: LatencyStats::default(),
            global: OnceCell::new(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn shards(&self) -> &[Arc<dyn Shard>] {
        &self.shards
    }

    pub fn latency(&self) -> &LatencyStats {
        &self.latency
    }

    /// Sums the statistics of every shard and publishes the total to all of
    /// them. Runs once; later calls return the cached statistics.
    pub async fn publish_global_stats(&self) -> Result<Arc<CorpusStats>, FederationError> {
        self.global
            .get_or_try_init(|| async {
                let collected = join_all(self.shards.iter().map(|s| async {
                    tokio::time::timeout(self.timeout, s.corpus_stats())
                        .await
                        .unwrap_or(Err(ShardError::Timeout(self.timeout)))
                }))
                .await;
                let parts = collected
                    .into_iter()
                    .enumerate()
                    .map(|(i, r)| r.map_err(|e| FederationError::GlobalStats(format!("shard {i}: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                let total = Arc::new(CorpusStats::combine(&parts));
                let published = join_all(
                    self.shards
                        .iter()
                        .map(|s| s.publish_global_stats(Arc::clone(&total))),
                )
                .await;
                for (i, r) in published.into_iter().enumerate() {
                    r.map_err(|e| FederationError::GlobalStats(format!("shard {i}: {e}")))?;
                }
                Ok(total)
            })
            .await
            .cloned()
    }

    /// Queries every shard for its top-k concurrently and merges the results.
    /// Shards that fail or time out are reported in `failures` and mark the
    /// result degraded; only when every shard fails is this an error.
    pub async fn search(&self, query: &ShardQuery) -> Result<FederatedResult, FederationError> {
        if self.shards.is_empty() {
            return Err(FederationError::NoShards);
        }
        let started = Instant::now();
        if query.stats == StatsMode::Global && query.mode == SearchMode::Lexical {
            self.publish_global_stats().await?;
        }
        let calls = self.shards.iter().enumerate().map(|(i, shard)| async move {
            let t0 = Instant::now();
            let out = match tokio::time::timeout(self.timeout, shard.search(query)).await {
                Ok(r) => r,
                Err(_) => Err(ShardError::Timeout(self.timeout)),
            };
            (i, t0.elapsed(), out)
        });
        let mut lists = Vec::new();
        let mut failures = Vec::new();
        let mut timings = Vec::new();
        for (i, took, out) in join_all(calls).await {
            let took_ms = took.as_secs_f64() * 1000.0;
            match out {
                Ok(hits) => {
                    timings.push(ShardTiming {
                        shard: i,
                        took_ms,
                        ok: true,
                        hits: hits.len(),
                    });
                    let entries = hits.into_iter().map(|h| h.with_shard(i)).collect();
                    lists.push(RankedList::new(query.q.clone(), entries));
                }
                Err(e) => {
                    log::warn!("shard {i} ({}) failed: {e}", self.shards[i].name());
                    timings.push(ShardTiming {
                        shard: i,
                        took_ms,
                        ok: false,
                        hits: 0,
                    });
                    failures.push(ShardFailure {
                        shard: i,
                        name: self.shards[i].name(),
                        error: e.to_string(),
                    });
                }
            }
        }
        if lists.is_empty() {
            return Err(FederationError::AllShardsFailed(failures));
        }
        let mut list = merge_ranked_lists(&lists, query.k)?;
        list.query_id = query.q.clone();
        let took = started.elapsed();
        self.latency.record(took);
        Ok(FederatedResult {
            list,
            degraded: !failures.is_empty(),
            failures,
            timings,
            took_ms: took.as_secs_f64() * 1000.0,
        })
    }

    pub async fn fetch_doc(&self, shard: usize, doc_id: &str) -> Result<Option<StoredDoc>, FederationError> {
        let s = self.shards.get(shard).ok_or(FederationError::UnknownShard(shard))?;
        Ok(s.fetch_doc(doc_id).await?)
    }

    /// First-stage retrieval followed by reranking. Lexical candidates carry
    /// their text; dense candidates need one stored-field fetch each.
    pub async fn rerank(
        &self,
        query: &str,
        first_stage: SearchMode,
        stats: StatsMode,
        cfg: &RerankConfig,
        scorer: &dyn Scorer,
    ) -> Result<RerankOutcome, FederationError> {
        cfg.validate()?;
        let sq = ShardQuery::new(query, cfg.first_stage_depth, first_stage)
            .with_stats(stats)
            .with_body(true);
        let mut first = self.search(&sq).await?;
        if first_stage == SearchMode::Dense {
            let keys: Vec<(usize, String)> = first
                .list
                .entries
                .iter()
                .map(|e| (e.shard, e.doc_id.clone()))
                .collect();
            let fetches = keys.iter().map(|(shard, id)| self.fetch_doc(*shard, id));
            for (entry, doc) in first.list.entries.iter_mut().zip(join_all(fetches).await) {
                if let Some(doc) = doc? {
                    entry.url = Some(doc.url);
                    entry.title = Some(doc.title);
                    entry.body = Some(doc.body);
                }
            }
        }
        let candidates = first.list.len();
        let reranked = rerank_candidates(query, &first.list, cfg, scorer).await?;
        Ok(RerankOutcome {
            list: reranked,
            candidates,
            degraded: first.degraded,
            failures: std::mem::take(&mut first.failures),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankOutcome {
    pub list: RankedList,
    pub candidates: usize,
    pub degraded: bool,
    pub failures: Vec<ShardFailure>,
}

/// One-shot federated search over `shards`.
pub async fn federated_search(
    query: &str,
    k: usize,
    shards: Vec<Arc<dyn Shard>>,
    mode: SearchMode,
    stats_mode: StatsMode,
) -> Result<FederatedResult, FederationError> {
    let q = ShardQuery::new(query, k, mode).with_stats(stats_mode);
    Aggregator::new(shards).search(&q).await
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(entries: &[(&str, f64)]) -> RankedList {
        RankedList::new(
            "q",
            entries.iter().map(|(id, s)| ScoredDoc::new(*id, *s)).collect(),
        )
    }

    fn ids(l: &RankedList) -> Vec<&str> {
        l.doc_ids().collect()
    }

    #[test]
    fn merge_examples() {
        let a = list(&[("a", 9.0), ("c", 7.0)]);
        let b = list(&[("b", 8.0), ("d", 6.0)]);
        assert_eq!(ids(&merge_ranked_lists(&[a.clone(), b.clone()], 3).unwrap()), ["a", "b", "c"]);
        assert_eq!(ids(&merge_ranked_lists(&[b, a], 3).unwrap()), ["a", "b", "c"]);

        let x = list(&[("x", 5.0)]);
        let w = list(&[("w", 5.0)]);
        assert_eq!(ids(&merge_ranked_lists(&[x.clone(), w], 2).unwrap()), ["w", "x"]);
        assert!(merge_ranked_lists(std::slice::from_ref(&x), 0).unwrap().is_empty());
        assert!(matches!(
            merge_ranked_lists(&[x.clone(), x], 5),
            Err(FederationError::DuplicateAcrossShards(id)) if id == "x"
        ));
        assert!(merge_ranked_lists(&[], 5).unwrap().is_empty());
    }

    #[test]
    fn percentile_examples() {
        let samples: Vec<Duration> = (1..=100).map(Duration::from_millis).collect();
        assert_eq!(latency_percentile(&samples, 0.95).unwrap(), Duration::from_millis(95));
        assert_eq!(latency_percentile(&samples, 0.5).unwrap(), Duration::from_millis(50));
        assert_eq!(latency_percentile(&samples, 1.0).unwrap(), Duration::from_millis(100));
        assert_eq!(latency_percentile(&samples, 0.001).unwrap(), Duration::from_millis(1));
        let one = [Duration::from_millis(7)];
        for p in [0.01, 0.5, 0.95, 1.0] {
            assert_eq!(latency_percentile(&one, p).unwrap(), Duration::from_millis(7));
        }
        assert_eq!(latency_percentile(&[], 0.5), Err(LatencyError::EmptySamples));
        assert!(latency_percentile(&one, 0.0).is_err());
        assert!(latency_percentile(&one, 1.5).is_err());
    }

    #[test]
    fn latency_summary_ordering() {
        let stats = LatencyStats::default();
        assert!(stats.summary().is_err());
        for ms in [30, 10, 20, 40, 500] {
            stats.record(Duration::from_millis(ms));
        }
        let s = stats.summary().unwrap();
        assert!(s.p50 <= s.p95 && s.p95 <= s.max);
        assert_eq!(s.max, Duration::from_millis(500));
        assert_eq!(s.p50, Duration::from_millis(30));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("dense".parse::<SearchMode>().unwrap(), SearchMode::Dense);
        assert_eq!("per-shard".parse::<StatsMode>().unwrap(), StatsMode::PerShard);
        assert!("both".parse::<StatsMode>().is_err());
        assert_eq!(serde_json::to_string(&StatsMode::PerShard).unwrap(), "\"per-shard\"");
    }

    use proptest::prelude::*;

    fn arb_lists() -> impl Strategy<Value = Vec<RankedList>> {
        prop::collection::vec(prop::collection::vec(0u8..8, 0..12), 1..5).prop_map(|shards| {
            shards
                .into_iter()
                .enumerate()
                .map(|(s, scores)| {
                    let mut entries: Vec<ScoredDoc> = scores
                        .into_iter()
                        .enumerate()
                        .map(|(i, sc)| ScoredDoc::new(format!("s{s}d{i}"), f64::from(sc)))
                        .collect();
                    entries.sort_by(compare_scored);
                    RankedList::new("q", entries)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn merge_permutation_invariant_and_associative(lists in arb_lists(), k in 0usize..30) {
            let forward = merge_ranked_lists(&lists, k).unwrap();
            let mut rev = lists.clone();
            rev.reverse();
            prop_assert_eq!(&forward.entries, &merge_ranked_lists(&rev, k).unwrap().entries);

            let (head, tail) = lists.split_at(lists.len() / 2);
            let left = merge_ranked_lists(head, usize::MAX).unwrap();
            let right = merge_ranked_lists(tail, usize::MAX).unwrap();
            let nested = merge_ranked_lists(&[left, right], k).unwrap();
            prop_assert_eq!(&forward.entries, &nested.entries);
            prop_assert!(forward.is_sorted());
            prop_assert_eq!(forward.len(), k.min(lists.iter().map(RankedList::len).sum()));
        }
    }
}
