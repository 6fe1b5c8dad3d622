use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use shardsearch::evalkit::{Qrels, RunFile};
use shardsearch::federation::Aggregator;
use shardsearch::traingen::{
    attach_texts, gen_anchor_examples, gen_ranking_negatives, read_anchors, write_examples, FederatedRetriever,
    GenStats, TrainingExample,
};
use shardsearch::LexicalIndex;
use tokio::runtime::Runtime;

use super::{create, open_federation, print_json, read_queries};
use crate::args::TargetArgs;
use crate::config::{overlay, usage, AppConfig};
use crate::layout;

#[derive(Debug, Args)]
pub struct GenAnchorArgs {
    /// Anchor file, one `target_doc_id<TAB>anchor_text` per line
    #[arg(long)]
    pub anchors: PathBuf,
    /// Output JSONL file
    #[arg(long)]
    pub out: PathBuf,
    /// BM25 negatives per example
    #[arg(long, env = "SHARDSEARCH_N_BM25_NEGATIVES")]
    pub n_negatives: Option<usize>,
    /// Also write the resolved document texts
    #[arg(long)]
    pub with_text: bool,
    #[command(flatten)]
    pub target: TargetArgs,
}

#[derive(Debug, Args)]
pub struct GenRankingArgs {
    /// Relevance judgments, `qid 0 docid grade` per line
    #[arg(long)]
    pub qrels: PathBuf,
    /// First-stage ranking in TREC run format
    #[arg(long)]
    pub run: PathBuf,
    /// Query texts, one `qid<TAB>text` per line
    #[arg(long)]
    pub queries: PathBuf,
    /// Output JSONL file
    #[arg(long)]
    pub out: PathBuf,
    /// Ranks of the run sampled from
    #[arg(long, env = "SHARDSEARCH_POOL_DEPTH")]
    pub pool_depth: Option<usize>,
    /// Random negatives per example
    #[arg(long, env = "SHARDSEARCH_N_RANDOM_NEGATIVES")]
    pub n_random: Option<usize>,
    /// Sampling seed
    #[arg(long, env = "SHARDSEARCH_SEED")]
    pub seed: Option<u64>,
    /// Also write the resolved document texts (needs an index target)
    #[arg(long)]
    pub with_text: bool,
    #[command(flatten)]
    pub target: TargetArgs,
}

/// Documents for text lookup and retrieval: one local partition is used
/// directly, anything else goes through an in-process aggregator.
enum Source {
    Single(LexicalIndex),
    Federated(Aggregator),
}

fn open_source(cfg: &AppConfig) -> anyhow::Result<Source> {
    if cfg.aggregator.is_some() {
        return Err(usage("training data needs --index-dir or --shards, not --aggregator"));
    }
    if cfg.shards.is_empty() && cfg.index_dirs.is_empty() {
        return Err(usage("give --index-dir or --shards"));
    }
    if cfg.shards.is_empty() {
        let dirs = layout::expand_index_dirs(&cfg.index_dirs)?;
        if let [dir] = dirs.as_slice() {
            if let Some(index) = layout::load_lexical(dir)? {
                return Ok(Source::Single(index));
            }
        }
    }
    Ok(Source::Federated(open_federation(cfg)?))
}

fn resolve_texts(source: &Source, rt: &Runtime, examples: &mut [TrainingExample]) {
    let join = |title: &str, body: &str| format!("{title}\n{body}");
    match source {
        Source::Single(index) => attach_texts(examples, |id| {
            index.get_stored(id).ok().map(|d| join(&d.title, &d.body))
        }),
        Source::Federated(agg) => attach_texts(examples, |id| {
            rt.block_on(async {
                for shard in 0..agg.shards().len() {
                    match agg.fetch_doc(shard, id).await {
                        Ok(Some(d)) => return Some(join(&d.title, &d.body)),
                        Ok(None) => {}
                        Err(e) => log::warn!("fetching `{id}` from shard {shard}: {e}"),
                    }
                }
                None
            })
        }),
    }
}

fn finish(out: &std::path::Path, examples: &[TrainingExample], stats: &GenStats) -> anyhow::Result<()> {
    let mut w = create(out)?;
    write_examples(&mut w, examples)?;
    w.flush().with_context(|| format!("writing {}", out.display()))?;
    print_json(stats)
}

pub fn gen_anchor(args: GenAnchorArgs, mut cfg: AppConfig, rt: &Runtime) -> anyhow::Result<()> {
    args.target.apply(&mut cfg);
    overlay(&mut cfg.sampling.n_bm25_negatives, args.n_negatives);
    cfg.validate()?;
    let file = File::open(&args.anchors).with_context(|| format!("opening {}", args.anchors.display()))?;
    let (anchors, malformed) = read_anchors(BufReader::new(file))?;
    if malformed > 0 {
        log::warn!("{malformed} malformed anchor line(s) skipped");
    }
    let source = open_source(&cfg)?;
    let (mut examples, stats) = match &source {
        Source::Single(index) => gen_anchor_examples(&anchors, index, &cfg.sampling)?,
        Source::Federated(agg) => {
            let retriever = FederatedRetriever::new(agg, rt.handle().clone());
            gen_anchor_examples(&anchors, &retriever, &cfg.sampling)?
        }
    };
    if args.with_text {
        resolve_texts(&source, rt, &mut examples);
    }
    finish(&args.out, &examples, &stats)
}

pub fn gen_ranking(args: GenRankingArgs, mut cfg: AppConfig, rt: &Runtime) -> anyhow::Result<()> {
    args.target.apply(&mut cfg);
    overlay(&mut cfg.sampling.pool_depth, args.pool_depth);
    overlay(&mut cfg.sampling.n_random_negatives, args.n_random);
    overlay(&mut cfg.sampling.rng_seed, args.seed);
    cfg.validate()?;
    let open = |p: &PathBuf| File::open(p).map(BufReader::new).with_context(|| format!("opening {}", p.display()));
    let qrels = Qrels::parse(open(&args.qrels)?).with_context(|| format!("reading {}", args.qrels.display()))?;
    let run = RunFile::parse(open(&args.run)?).with_context(|| format!("reading {}", args.run.display()))?;
    let texts: HashMap<String, String> = read_queries(&args.queries)?.into_iter().collect();
    let (mut examples, stats) = gen_ranking_negatives(&qrels, &run, &texts, &cfg.sampling)?;
    if args.with_text {
        let source = open_source(&cfg)?;
        resolve_texts(&source, rt, &mut examples);
    }
    finish(&args.out, &examples, &stats)
}
