mod build;
mod eval;
mod query;
mod serve;
mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use clap::Subcommand;
use shardsearch::evalkit::parse_queries;
use shardsearch::federation::{Aggregator, AggregatorClient, RemoteShard, Shard};
use tokio::runtime::Runtime;

use crate::config::{usage, AppConfig};
use crate::layout;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build one BM25 index per partition from a JSONL corpus
    BuildLexical(build::BuildLexicalArgs),
    /// Embed a corpus per segment and merge segments into partition indexes
    BuildDense(build::BuildDenseArgs),
    /// Concatenate flat vector index files into one
    MergeDense(build::MergeDenseArgs),
    /// Serve one partition over HTTP
    ServeShard(serve::ServeShardArgs),
    /// Serve a federating aggregator over HTTP
    ServeAggregator(serve::ServeAggregatorArgs),
    /// Run queries and print results or write a TREC run file
    Search(query::SearchArgs),
    /// Retrieve candidates, rerank them and print or write the result
    Rerank(query::RerankArgs),
    /// Build training examples with BM25 negatives from anchor text
    GenAnchorTrain(train::GenAnchorArgs),
    /// Build training examples with random negatives from a ranking
    GenRankingTrain(train::GenRankingArgs),
    /// Score a run file against relevance judgments
    Eval(eval::EvalArgs),
    /// Replay a query file and report latency percentiles
    BenchLatency(query::BenchArgs),
}

pub fn run(command: Command, cfg: AppConfig, rt: &Runtime) -> anyhow::Result<()> {
    match command {
        Command::BuildLexical(a) => build::build_lexical(a, cfg, rt),
        Command::BuildDense(a) => build::build_dense(a, cfg, rt),
        Command::MergeDense(a) => build::merge_dense(a),
        Command::ServeShard(a) => serve::serve_shard(a, cfg, rt),
        Command::ServeAggregator(a) => serve::serve_aggregator(a, cfg, rt),
        Command::Search(a) => query::search(a, cfg, rt),
        Command::Rerank(a) => query::rerank(a, cfg, rt),
        Command::GenAnchorTrain(a) => train::gen_anchor(a, cfg, rt),
        Command::GenRankingTrain(a) => train::gen_ranking(a, cfg, rt),
        Command::Eval(a) => eval::eval(a, cfg),
        Command::BenchLatency(a) => query::bench(a, cfg, rt),
    }
}

pub fn read_queries(path: &Path) -> anyhow::Result<Vec<(String, String)>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_queries(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

pub fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

pub enum Backend {
    Remote(AggregatorClient),
    Federated(Aggregator),
}

/// Exactly one of aggregator URL, shard URLs or index directories.
pub fn open_backend(cfg: &AppConfig) -> anyhow::Result<Backend> {
    let given = usize::from(cfg.aggregator.is_some())
        + usize::from(!cfg.shards.is_empty())
        + usize::from(!cfg.index_dirs.is_empty());
    if given != 1 {
        return Err(usage("give exactly one of --aggregator, --shards or --index-dir"));
    }
    match &cfg.aggregator {
        Some(url) => Ok(Backend::Remote(AggregatorClient::new(url.clone(), cfg.timeout()))),
        None => Ok(Backend::Federated(open_federation(cfg)?)),
    }
}

/// In-process aggregator over shard URLs or local index directories.
pub fn open_federation(cfg: &AppConfig) -> anyhow::Result<Aggregator> {
    let shards: Vec<Arc<dyn Shard>> = if !cfg.shards.is_empty() {
        cfg.shards
            .iter()
            .map(|u| Arc::new(RemoteShard::with_timeout(u.clone(), cfg.timeout())) as Arc<dyn Shard>)
            .collect()
    } else if !cfg.index_dirs.is_empty() {
        layout::expand_index_dirs(&cfg.index_dirs)?
            .iter()
            .map(|d| {
                layout::load_shard(cfg, d, d.display().to_string()).map(|s| Arc::new(s) as Arc<dyn Shard>)
            })
            .collect::<anyhow::Result<_>>()?
    } else {
        return Err(usage("give --shards or --index-dir"));
    };
    Ok(Aggregator::new(shards).with_timeout(cfg.timeout()))
}
