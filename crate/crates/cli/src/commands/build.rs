use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use shardsearch::docmodel::{read_corpus, PartitionError};
use shardsearch::embed::{Embedder, HashingEmbedder, RemoteEmbedder};
use shardsearch::lexindex::build_index;
use shardsearch::{denseindex, Document, EmbeddingSpec, FlatVectorIndex, PartitionPlan};
use tokio::runtime::Runtime;

use crate::args::{Bm25Args, EmbedArgs, PartitionArgs};
use crate::config::{overlay_vec, usage, AppConfig};
use crate::layout::{self, Manifest};

#[derive(Debug, Args)]
pub struct BuildLexicalArgs {
    /// Corpus files (.jsonl or .jsonl.gz)
    #[arg(long, value_delimiter = ',', env = "SHARDSEARCH_CORPUS")]
    pub corpus: Vec<PathBuf>,
    /// Output directory; receives manifest.json and part-N/ directories
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub partition: PartitionArgs,
    #[command(flatten)]
    pub bm25: Bm25Args,
}

#[derive(Debug, Args)]
pub struct BuildDenseArgs {
    /// Corpus files (.jsonl or .jsonl.gz)
    #[arg(long, value_delimiter = ',', env = "SHARDSEARCH_CORPUS")]
    pub corpus: Vec<PathBuf>,
    /// Output directory; receives segments/ and part-N/dense.fvi
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub partition: PartitionArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
    /// Per-request timeout for the embedding service, in milliseconds
    #[arg(long, env = "SHARDSEARCH_TIMEOUT_MS")]
    pub timeout_ms: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MergeDenseArgs {
    /// Input .fvi files, concatenated in the order given
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output .fvi file
    #[arg(long)]
    pub out: PathBuf,
}

struct Loaded {
    docs: Vec<Document>,
    plan: PartitionPlan,
}

fn load_and_plan(cfg: &AppConfig) -> anyhow::Result<Loaded> {
    if cfg.corpus.is_empty() {
        return Err(usage("no corpus given (--corpus)"));
    }
    let mut docs = Vec::new();
    for path in &cfg.corpus {
        docs.extend(read_corpus(path).with_context(|| format!("reading corpus {}", path.display()))?);
    }
    let mut seen = HashSet::with_capacity(docs.len());
    for d in &docs {
        if !seen.insert(d.id.as_str()) {
            bail!("document id `{}` appears more than once in the corpus", d.id);
        }
    }
    let num_segments = match cfg.partition.num_segments {
        Some(n) => n,
        None => docs.iter().map(|d| d.segment + 1).max().unwrap_or(0),
    };
    let plan = PartitionPlan::new(num_segments, cfg.partition.partitions).map_err(|e| match e {
        PartitionError::InvalidArgs(msg) => usage(format!("cannot partition: {msg}")),
        other => other.into(),
    })?;
    Ok(Loaded { docs, plan })
}

fn split(docs: Vec<Document>, plan: &PartitionPlan) -> anyhow::Result<Vec<Vec<Document>>> {
    let mut parts: Vec<Vec<Document>> = vec![Vec::new(); plan.num_partitions()];
    for d in docs {
        let p = plan.assign(d.segment).with_context(|| format!("document `{}`", d.id))?;
        parts[p].push(d);
    }
    Ok(parts)
}

pub fn build_lexical(args: BuildLexicalArgs, mut cfg: AppConfig, _rt: &Runtime) -> anyhow::Result<()> {
    overlay_vec(&mut cfg.corpus, args.corpus);
    args.partition.apply(&mut cfg);
    args.bm25.apply(&mut cfg);
    cfg.validate()?;
    let Loaded { docs, plan } = load_and_plan(&cfg)?;
    let parts = split(docs, &plan)?;
    let counts: Vec<usize> = parts.iter().map(Vec::len).collect();
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let params = cfg.bm25;
    let out = &args.out;
    std::thread::scope(|s| {
        let handles: Vec<_> = parts
            .into_iter()
            .enumerate()
            .map(|(i, docs)| {
                s.spawn(move || -> anyhow::Result<()> {
                    let dir = out.join(layout::partition_dir_name(i));
                    std::fs::create_dir_all(&dir)?;
                    let index = build_index(docs, params)?;
                    index.save(&dir.join(layout::LEXICAL_FILE))?;
                    log::info!("partition {i}: {} documents", index.len());
                    Ok(())
                })
            })
            .collect();
        handles
            .into_iter()
            .try_for_each(|h| h.join().expect("build thread panicked"))
    })?;
    let manifest = Manifest::new(&plan, &counts);
    manifest.write(out)?;
    crate::commands::print_json(&manifest)
}

fn doc_text(d: &Document) -> String {
    let text = [d.title.as_str(), d.body.as_str()]
        .into_iter()
        .filter(|s| !s.trim().is_empty())
        .collect::<Vec<_>>()
        .join("\n");
    if !text.is_empty() {
        text
    } else if !d.url.trim().is_empty() {
        d.url.clone()
    } else {
        d.id.clone()
    }
}

pub fn build_dense(args: BuildDenseArgs, mut cfg: AppConfig, rt: &Runtime) -> anyhow::Result<()> {
    overlay_vec(&mut cfg.corpus, args.corpus);
    args.partition.apply(&mut cfg);
    args.embed.apply(&mut cfg);
    crate::config::overlay(&mut cfg.timeout_ms, args.timeout_ms);
    cfg.validate()?;
    let Loaded { docs, plan } = load_and_plan(&cfg)?;
    let embedder: Box<dyn Embedder> = match &cfg.embed.endpoint {
        Some(url) => {
            let remote = rt
                .block_on(RemoteEmbedder::connect(url.clone(), cfg.timeout()))
                .with_context(|| format!("contacting embedding service at {url}"))?;
            Box::new(remote.with_batch_size(cfg.embed.batch_size))
        }
        None => Box::new(HashingEmbedder::new(EmbeddingSpec {
            dim: cfg.embed.dim,
            max_tokens: cfg.embed.max_tokens,
        })),
    };
    let dim = embedder.dim();

    let mut by_segment: BTreeMap<u32, Vec<Document>> = BTreeMap::new();
    for d in docs {
        plan.assign(d.segment).with_context(|| format!("document `{}`", d.id))?;
        by_segment.entry(d.segment).or_default().push(d);
    }
    let mut segments: BTreeMap<u32, FlatVectorIndex> = BTreeMap::new();
    for (&seg, docs) in &by_segment {
        let mut index = FlatVectorIndex::new(dim)?;
        for chunk in docs.chunks(cfg.embed.batch_size) {
            let texts: Vec<String> = chunk.iter().map(doc_text).collect();
            let vectors = rt.block_on(embedder.embed(&texts))?;
            for (d, v) in chunk.iter().zip(&vectors) {
                index.add(d.id.clone(), v)?;
            }
        }
        let path = layout::segment_file(&args.out, seg);
        std::fs::create_dir_all(path.parent().expect("segment file has a parent"))?;
        denseindex::persist_dense(&index, &path)?;
        log::info!("segment {seg}: {} vectors", index.len());
        segments.insert(seg, index);
    }
    let mut counts = Vec::with_capacity(plan.num_partitions());
    for (i, &(first, last)) in plan.ranges().iter().enumerate() {
        let parts: Vec<FlatVectorIndex> = (first..=last).filter_map(|s| segments.remove(&s)).collect();
        let merged = denseindex::merge_dense(&parts, dim)?;
        let dir = args.out.join(layout::partition_dir_name(i));
        std::fs::create_dir_all(&dir)?;
        denseindex::persist_dense(&merged, &dir.join(layout::DENSE_FILE))?;
        counts.push(merged.len());
    }
    let manifest = Manifest::new(&plan, &counts);
    manifest.write(&args.out)?;
    crate::commands::print_json(&manifest)
}

pub fn merge_dense(args: MergeDenseArgs) -> anyhow::Result<()> {
    let parts = args
        .inputs
        .iter()
        .map(|p| denseindex::load_dense(p).with_context(|| format!("loading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let dim = parts[0].dim();
    let merged = denseindex::merge_dense(&parts, dim)?;
    denseindex::persist_dense(&merged, &args.out)?;
    crate::commands::print_json(&serde_json::json!({
        "inputs": args.inputs.len(),
        "vectors": merged.len(),
        "dim": dim,
        "out": args.out,
    }))
}
