use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Args;
use shardsearch::federation::http::{aggregator_router, serve, shard_router, AggregatorService};
use shardsearch::rerank::RemoteScorer;
use tokio::net::TcpListener;
use tokio::runtime::Runtime;

use crate::args::EmbedArgs;
use crate::config::{overlay, overlay_vec, usage, AppConfig};
use crate::layout;

#[derive(Debug, Args)]
pub struct ServeShardArgs {
    /// Partition directory holding lexical.idx and/or dense.fvi
    #[arg(long = "index-dir", env = "SHARDSEARCH_SHARD_DIR")]
    pub index_dir: PathBuf,
    /// Address to listen on; port 0 picks a free port
    #[arg(long, default_value = "127.0.0.1:7700", env = "SHARDSEARCH_LISTEN")]
    pub listen: String,
    /// Name reported in failures and timings
    #[arg(long)]
    pub name: Option<String>,
    /// Per-request timeout for the embedding service, in milliseconds
    #[arg(long, env = "SHARDSEARCH_TIMEOUT_MS")]
    pub timeout_ms: Option<u64>,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Debug, Args)]
pub struct ServeAggregatorArgs {
    /// Shard base URLs (comma-separated or repeated)
    #[arg(long, value_delimiter = ',', env = "SHARDSEARCH_SHARDS")]
    pub shards: Vec<String>,
    /// Address to listen on; port 0 picks a free port
    #[arg(long, default_value = "127.0.0.1:7800", env = "SHARDSEARCH_LISTEN")]
    pub listen: String,
    /// Per-shard request timeout in milliseconds
    #[arg(long, env = "SHARDSEARCH_TIMEOUT_MS")]
    pub timeout_ms: Option<u64>,
    /// Results returned when a request has no `k`
    #[arg(long, env = "SHARDSEARCH_DEFAULT_K")]
    pub default_k: Option<usize>,
    /// Base URL of a `/score` service for `scorer=remote`
    #[arg(long, env = "SHARDSEARCH_SCORER_URL")]
    pub scorer_endpoint: Option<String>,
    /// Default first-stage depth for /rerank
    #[arg(long, env = "SHARDSEARCH_RERANK_DEPTH")]
    pub depth: Option<usize>,
    /// Default output size for /rerank
    #[arg(long, env = "SHARDSEARCH_RERANK_OUTPUT_SIZE")]
    pub output_size: Option<usize>,
    /// Candidates per scorer request
    #[arg(long, env = "SHARDSEARCH_RERANK_BATCH_SIZE")]
    pub batch_size: Option<usize>,
}

/// Binds, prints the bound address on stdout, and serves until interrupted.
fn serve_until_interrupted<F, Fut>(rt: &Runtime, listen: &str, start: F) -> anyhow::Result<()>
where
    F: FnOnce(TcpListener) -> Fut,
    Fut: Future<Output = std::io::Result<()>>,
{
    rt.block_on(async {
        let listener = TcpListener::bind(listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        tokio::select! {
            r = start(listener) => r.context("server stopped")?,
            _ = tokio::signal::ctrl_c() => log::info!("interrupted; shutting down"),
        }
        Ok(())
    })
}

pub fn serve_shard(args: ServeShardArgs, mut cfg: AppConfig, rt: &Runtime) -> anyhow::Result<()> {
    args.embed.apply(&mut cfg);
    overlay(&mut cfg.timeout_ms, args.timeout_ms);
    cfg.validate()?;
    let name = args
        .name
        .clone()
        .unwrap_or_else(|| args.index_dir.display().to_string());
    let shard = Arc::new(layout::load_shard(&cfg, &args.index_dir, name)?);
    serve_until_interrupted(rt, &args.listen, |l| serve(l, shard_router(shard)))
}

pub fn serve_aggregator(args: ServeAggregatorArgs, mut cfg: AppConfig, rt: &Runtime) -> anyhow::Result<()> {
    overlay_vec(&mut cfg.shards, args.shards);
    overlay(&mut cfg.timeout_ms, args.timeout_ms);
    overlay(&mut cfg.default_k, args.default_k);
    overlay(&mut cfg.rerank.first_stage_depth, args.depth);
    overlay(&mut cfg.rerank.output_size, args.output_size);
    overlay(&mut cfg.rerank.batch_size, args.batch_size);
    if args.scorer_endpoint.is_some() {
        cfg.scorer_endpoint = args.scorer_endpoint;
    }
    cfg.validate()?;
    if cfg.shards.is_empty() {
        return Err(usage("no shards given (--shards)"));
    }
    cfg.index_dirs.clear();
    let aggregator = super::open_federation(&cfg)?;
    let mut service = AggregatorService::new(aggregator);
    service.default_k = cfg.default_k;
    service.rerank = cfg.rerank.clone();
    service.remote_scorer = cfg
        .scorer_endpoint
        .as_ref()
        .map(|url| RemoteScorer::new(url.clone(), cfg.rerank.batch_size, cfg.timeout()));
    let service = Arc::new(service);
    serve_until_interrupted(rt, &args.listen, |l| serve(l, aggregator_router(service)))
}
