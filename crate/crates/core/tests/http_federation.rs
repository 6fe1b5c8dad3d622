mod common;

use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use shardsearch::embed::{Embedder, HashingEmbedder};
use shardsearch::federation::http::{
    aggregator_router, shard_router, AggregatorSearchResponse, AggregatorService, RerankResponse,
    ShardSearchResponse, ShardStatsResponse,
};
use shardsearch::federation::{
    Aggregator, LatencySummary, LocalShard, RemoteShard, SearchMode, Shard, ShardQuery, StatsMode,
};
use shardsearch::lexindex::build_index;
use shardsearch::{Bm25Params, Document, EmbeddingSpec, Field, FlatVectorIndex, PartitionPlan};

use common::{random_query, rng, synth_corpus};

async fn spawn(router: axum::Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    format!("http://{addr}")
}

fn embedder() -> Arc<HashingEmbedder> {
    Arc::new(HashingEmbedder::new(EmbeddingSpec { dim: 32, max_tokens: 64 }))
}

fn local_shard(name: &str, docs: Vec<Document>) -> LocalShard {
    let emb = embedder();
    let mut dense = FlatVectorIndex::new(emb.dim()).unwrap();
    for d in &docs {
        dense.add(d.id.clone(), &emb.embed_one(&d.body)).unwrap();
    }
    let lex = build_index(docs, Bm25Params::default()).unwrap();
    LocalShard::new(name)
        .with_lexical(Arc::new(lex))
        .with_dense(Arc::new(dense), emb)
}

struct Cluster {
    docs: Vec<Document>,
    shard_urls: Vec<String>,
}

async fn cluster(n_docs: usize, seed: u64) -> Cluster {
    let docs = synth_corpus(n_docs, 800, 47, seed);
    let plan = PartitionPlan::new(47, 4).unwrap();
    let mut parts: Vec<Vec<Document>> = vec![Vec::new(); 4];
    for d in &docs {
        parts[plan.assign(d.segment).unwrap()].push(d.clone());
    }
    let mut shard_urls = Vec::new();
    for (i, p) in parts.into_iter().enumerate() {
        let shard = Arc::new(local_shard(&format!("s{i}"), p));
        shard_urls.push(spawn(shard_router(shard)).await);
    }
    Cluster { docs, shard_urls }
}

fn remote_shards(urls: &[String]) -> Vec<Arc<dyn Shard>> {
    urls.iter()
        .map(|u| Arc::new(RemoteShard::with_timeout(u.clone(), Duration::from_secs(10))) as Arc<dyn Shard>)
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn global_stats_over_http_match_monolith() {
    let c = cluster(600, 5).await;
    let mono = build_index(c.docs.clone(), Bm25Params::default()).unwrap();
    let agg = Aggregator::new(remote_shards(&c.shard_urls));
    let mut r = rng(6);
    for _ in 0..20 {
        let q = random_query(&mut r, 800);
        let field = [Field::Body, Field::Title, Field::Url][r.random_range(0..3)];
        let want = mono.search(&q, 50, field);
        let sq = ShardQuery::new(q.clone(), 50, SearchMode::Lexical)
            .with_stats(StatsMode::Global)
            .with_field(field);
        let got = agg.search(&sq).await.unwrap().list.entries;
        assert_eq!(got.len(), want.len(), "{q} {field}");
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.doc_id, w.doc_id, "{q} {field}");
            assert!((g.score - w.score).abs() <= 1e-6);
            assert_eq!(g.title, w.title);
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn dense_over_http_matches_single_index() {
    let c = cluster(300, 7).await;
    let single = local_shard("all", c.docs.clone());
    let agg = Aggregator::new(remote_shards(&c.shard_urls));
    for q in ["w1 w2", "w10", "w3 w300 w5"] {
        let sq = ShardQuery::new(q, 25, SearchMode::Dense);
        let want = single.search(&sq).await.unwrap();
        let got = agg.search(&sq).await.unwrap().list.entries;
        let ids = |v: &[shardsearch::ScoredDoc]| v.iter().map(|h| (h.doc_id.clone(), h.score)).collect::<Vec<_>>();
        assert_eq!(ids(&got), ids(&want), "{q}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn shard_endpoints() {
    let mut docs = synth_corpus(20, 50, 1, 9);
    docs[0].id = "a/b c?d".into();
    docs[0].body = "unique snowflake".into();
    let shard = Arc::new(local_shard("s", docs));
    let url = spawn(shard_router(shard)).await;
    let http = reqwest::Client::new();

    let resp: ShardSearchResponse = http
        .get(format!("{url}/search"))
        .query(&[("q", "snowflake"), ("k", "5"), ("body", "true")])
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(resp.results.len(), 1);
    assert_eq!(resp.results[0].docid, "a/b c?d");
    assert_eq!(resp.results[0].body.as_deref(), Some("unique snowflake"));

    let remote = RemoteShard::new(url.clone());
    let doc = remote.fetch_doc("a/b c?d").await.unwrap().unwrap();
    assert_eq!(doc.body, "unique snowflake");
    assert!(remote.fetch_doc("nope").await.unwrap().is_none());

    for bad in [vec![("k", "3")], vec![("q", "x"), ("k", "-1")], vec![("q", "x"), ("mode", "fuzzy")]] {
        let status = http.get(format!("{url}/search")).query(&bad).send().await.unwrap().status();
        assert_eq!(status, 400, "{bad:?}");
    }
    // global mode before any statistics were published
    let status = http
        .get(format!("{url}/search"))
        .query(&[("q", "x"), ("stats", "global")])
        .send()
        .await
        .unwrap()
        .status();
    assert_eq!(status, 409);

    let stats: ShardStatsResponse = http.get(format!("{url}/stats")).send().await.unwrap().json().await.unwrap();
    assert!(stats.corpus.is_none());
    assert_eq!(stats.mode_stats.n, 20);
    assert!(stats.mode_stats.df_available);
    assert!(remote.corpus_stats().await.unwrap().fields.values().all(|f| f.doc_count == 20));
    assert_eq!(http.get(format!("{url}/health")).send().await.unwrap().status(), 200);
}

#[tokio::test(flavor = "multi_thread")]
async fn aggregator_service_and_degraded_mode() {
    let c = cluster(400, 11).await;
    // reserve a port, then close it so the fifth shard refuses connections
    let dead = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}", l.local_addr().unwrap())
    };
    let mut urls = c.shard_urls.clone();
    urls.push(dead);
    let svc = AggregatorService::new(Aggregator::new(remote_shards(&urls)));
    let url = spawn(aggregator_router(Arc::new(svc))).await;
    let http = reqwest::Client::new();

    let resp: AggregatorSearchResponse = http
        .get(format!("{url}/search"))
        .query(&[("q", "w1 w2"), ("k", "15")])
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(resp.degraded);
    assert_eq!(resp.failed_shards.len(), 1);
    assert_eq!(resp.failed_shards[0].shard, 4);
    assert_eq!(resp.results.len(), 15);
    assert!(resp.results.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(resp.results.iter().all(|h| h.shard.is_some_and(|s| s < 4)));

    let rr: RerankResponse = http
        .get(format!("{url}/rerank"))
        .query(&[("q", "w1 w2"), ("depth", "50"), ("out", "5")])
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(rr.results.len(), 5);
    assert_eq!(rr.candidates, 50);
    assert!(rr.results.iter().all(|h| h.first_stage_score.is_some()));

    let status = http
        .get(format!("{url}/rerank"))
        .query(&[("q", "x"), ("scorer", "remote")])
        .send()
        .await
        .unwrap()
        .status();
    assert_eq!(status, 400);

    let lat: LatencySummary = http.get(format!("{url}/latency")).send().await.unwrap().json().await.unwrap();
    assert_eq!(lat.count, 2);
    assert!(lat.p50 <= lat.p95 && lat.p95 <= lat.max);
}

#[tokio::test(flavor = "multi_thread")]
async fn all_shards_down_is_an_error() {
    let dead: Vec<String> = (0..2)
        .map(|_| {
            let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
            format!("http://{}", l.local_addr().unwrap())
        })
        .collect();
    let agg = Aggregator::new(remote_shards(&dead));
    let err = agg.search(&ShardQuery::new("x", 5, SearchMode::Lexical)).await.unwrap_err();
    assert!(matches!(
        err,
        shardsearch::federation::FederationError::AllShardsFailed(ref f) if f.len() == 2
    ));
}
