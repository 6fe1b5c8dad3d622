use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, ValueEnum};
use shardsearch::evalkit::RunFile;
use shardsearch::federation::http::{AggregatorSearchResponse, RerankResponse, WireHit};
use shardsearch::federation::{LatencySummary, SearchMode, ShardQuery, StatsMode};
use shardsearch::rerank::{OverlapScorer, RemoteScorer, RerankConfig, Scorer};
use shardsearch::RankedList;
use tokio::runtime::Runtime;

use super::{open_backend, print_json, Backend};
use crate::args::{QueryInput, RetrievalArgs, TargetArgs};
use crate::config::{overlay, usage, AppConfig};

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub input: QueryInput,
    /// Results per query
    #[arg(long, env = "SHARDSEARCH_K")]
    pub k: Option<usize>,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Write a TREC run file instead of printing results
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Run tag written in the last column of the run file
    #[arg(long, default_value = "shardsearch")]
    pub tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerChoice {
    Builtin,
    Remote,
}

impl ScorerChoice {
    fn as_str(self) -> &'static str {
        match self {
            ScorerChoice::Builtin => "builtin",
            ScorerChoice::Remote => "remote",
        }
    }
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[command(flatten)]
    pub input: QueryInput,
    /// First-stage candidates passed to the scorer
    #[arg(long, env = "SHARDSEARCH_RERANK_DEPTH")]
    pub depth: Option<usize>,
    /// Reranked results kept per query
    #[arg(long, env = "SHARDSEARCH_RERANK_OUTPUT_SIZE")]
    pub output_size: Option<usize>,
    /// Candidates per scorer request
    #[arg(long, env = "SHARDSEARCH_RERANK_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    /// Scoring function
    #[arg(long, value_enum, default_value = "builtin")]
    pub scorer: ScorerChoice,
    /// Base URL of a `/score` service, for `--scorer remote`
    #[arg(long, env = "SHARDSEARCH_SCORER_URL")]
    pub scorer_endpoint: Option<String>,
    /// First-stage retrieval mode
    #[arg(long, default_value = "lexical")]
    pub first_stage: SearchMode,
    /// Collection statistics for lexical first-stage scoring
    #[arg(long, default_value = "per-shard")]
    pub stats: StatsMode,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Write a TREC run file instead of printing results
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Run tag written in the last column of the run file
    #[arg(long, default_value = "shardsearch-rerank")]
    pub tag: String,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Query file, one `qid<TAB>text` per line
    #[arg(long)]
    pub queries: PathBuf,
    /// Passes over the query file
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    /// Results per query
    #[arg(long, env = "SHARDSEARCH_K")]
    pub k: Option<usize>,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Print the summary as JSON
    #[arg(long)]
    pub json: bool,
}

async fn search_one(backend: &Backend, q: &ShardQuery) -> anyhow::Result<AggregatorSearchResponse> {
    match backend {
        Backend::Remote(client) => Ok(client.search(q).await?),
        Backend::Federated(agg) => {
            let out = agg.search(q).await?;
            Ok(AggregatorSearchResponse {
                query: q.q.clone(),
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
            })
        }
    }
}

fn warn_degraded(qid: &str, degraded: bool, failed: usize) {
    if degraded {
        log::warn!("query {qid}: partial result, {failed} shard(s) failed");
    }
}

fn to_ranked(qid: &str, hits: Vec<WireHit>) -> RankedList {
    RankedList::new(qid, hits.into_iter().map(WireHit::into_scored).collect())
}

fn write_run(path: &std::path::Path, run: &RunFile) -> anyhow::Result<()> {
    let mut out = super::create(path)?;
    run.write(&mut out)?;
    std::io::Write::flush(&mut out).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {} queries to {}", run.len(), path.display());
    Ok(())
}

fn print_line<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

pub fn search(args: SearchArgs, mut cfg: AppConfig, rt: &Runtime) -> anyhow::Result<()> {
    args.target.apply(&mut cfg);
    overlay(&mut cfg.default_k, args.k);
    cfg.validate()?;
    let queries = args.input.load()?;
    let backend = open_backend(&cfg)?;
    let single = args.input.q.is_some();
    let mut run = RunFile::new(&args.tag);
    for (qid, text) in &queries {
        let q = ShardQuery::new(text.clone(), cfg.default_k, args.retrieval.mode)
            .with_stats(args.retrieval.stats)
            .with_field(args.retrieval.field);
        let resp = rt.block_on(search_one(&backend, &q))?;
        warn_degraded(qid, resp.degraded, resp.failed_shards.len());
        if args.run.is_some() {
            run.push_ranked(&to_ranked(qid, resp.results));
        } else if single {
            print_json(&resp)?;
        } else {
            print_line(&serde_json::json!({ "qid": qid, "response": resp }))?;
        }
    }
    match &args.run {
        Some(path) => write_run(path, &run),
        None => Ok(()),
    }
}

pub fn rerank(args: RerankArgs, mut cfg: AppConfig, rt: &Runtime) -> anyhow::Result<()> {
    args.target.apply(&mut cfg);
    overlay(&mut cfg.rerank.first_stage_depth, args.depth);
    overlay(&mut cfg.rerank.output_size, args.output_size);
    overlay(&mut cfg.rerank.batch_size, args.batch_size);
    if args.scorer_endpoint.is_some() {
        cfg.scorer_endpoint = args.scorer_endpoint.clone();
    }
    cfg.validate()?;
    let queries = args.input.load()?;
    let backend = open_backend(&cfg)?;
    let remote_scorer = match (args.scorer, &backend, &cfg.scorer_endpoint) {
        (ScorerChoice::Remote, Backend::Federated(_), None) => {
            return Err(usage("--scorer remote needs --scorer-endpoint"));
        }
        (ScorerChoice::Remote, Backend::Federated(_), Some(url)) => Some(RemoteScorer::new(
            url.clone(),
            cfg.rerank.batch_size,
            cfg.timeout(),
        )),
        _ => None,
    };
    let single = args.input.q.is_some();
    let mut run = RunFile::new(&args.tag);
    for (qid, text) in &queries {
        let resp = rt.block_on(rerank_one(
            &backend,
            text,
            &cfg.rerank,
            args.scorer,
            remote_scorer.as_ref(),
            args.first_stage,
            args.stats,
        ))?;
        warn_degraded(qid, resp.degraded, resp.failed_shards.len());
        if args.run.is_some() {
            run.push_ranked(&to_ranked(qid, resp.results));
        } else if single {
            print_json(&resp)?;
        } else {
            print_line(&serde_json::json!({ "qid": qid, "response": resp }))?;
        }
    }
    match &args.run {
        Some(path) => write_run(path, &run),
        None => Ok(()),
    }
}

async fn rerank_one(
    backend: &Backend,
    query: &str,
    cfg: &RerankConfig,
    choice: ScorerChoice,
    remote: Option<&RemoteScorer>,
    first_stage: SearchMode,
    stats: StatsMode,
) -> anyhow::Result<RerankResponse> {
    match backend {
        Backend::Remote(client) => Ok(client
            .rerank(
                query,
                cfg.first_stage_depth,
                cfg.output_size,
                choice.as_str(),
                first_stage,
                stats,
            )
            .await?),
        Backend::Federated(agg) => {
            let scorer: &dyn Scorer = match remote {
                Some(r) => r,
                None => &OverlapScorer,
            };
            let t0 = Instant::now();
            let out = agg.rerank(query, first_stage, stats, cfg, scorer).await?;
            Ok(RerankResponse {
                query: query.to_string(),
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
            })
        }
    }
}

pub fn bench(args: BenchArgs, mut cfg: AppConfig, rt: &Runtime) -> anyhow::Result<()> {
    args.target.apply(&mut cfg);
    overlay(&mut cfg.default_k, args.k);
    cfg.validate()?;
    if args.repeat == 0 {
        return Err(usage("--repeat must be at least 1"));
    }
    let queries = super::read_queries(&args.queries)?;
    if queries.is_empty() {
        return Err(usage(format!("{} holds no queries", args.queries.display())));
    }
    let backend = open_backend(&cfg)?;
    let mut samples = Vec::with_capacity(queries.len() * args.repeat);
    for _ in 0..args.repeat {
        for (qid, text) in &queries {
            let q = ShardQuery::new(text.clone(), cfg.default_k, args.retrieval.mode)
                .with_stats(args.retrieval.stats)
                .with_field(args.retrieval.field);
            let t0 = Instant::now();
            let resp = rt.block_on(search_one(&backend, &q))?;
            samples.push(t0.elapsed());
            warn_degraded(qid, resp.degraded, resp.failed_shards.len());
        }
    }
    let summary = LatencySummary::from_samples(&samples)?;
    if args.json {
        print_json(&summary)
    } else {
        let ms = |d: std::time::Duration| d.as_secs_f64() * 1000.0;
        println!("queries  {}", summary.count);
        println!("p50_ms   {:.3}", ms(summary.p50));
        println!("p95_ms   {:.3}", ms(summary.p95));
        println!("max_ms   {:.3}", ms(summary.max));
        Ok(())
    }
}
