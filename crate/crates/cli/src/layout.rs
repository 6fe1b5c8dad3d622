//! On-disk layout of a build: `manifest.json`, one `part-N/` directory per
//! partition holding `lexical.idx` and/or `dense.fvi`, and per-segment dense
//! parts under `segments/`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use shardsearch::embed::{Embedder, HashingEmbedder, RemoteEmbedder};
use shardsearch::federation::LocalShard;
use shardsearch::{EmbeddingSpec, FlatVectorIndex, LexicalIndex, PartitionPlan};

use crate::config::AppConfig;

pub const MANIFEST: &str = "manifest.json";
pub const LEXICAL_FILE: &str = "lexical.idx";
pub const DENSE_FILE: &str = "dense.fvi";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionEntry {
    pub dir: String,
    pub first_segment: u32,
    pub last_segment: u32,
    pub docs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_segments: u32,
    pub partitions: Vec<PartitionEntry>,
}

impl Manifest {
    pub fn new(plan: &PartitionPlan, doc_counts: &[usize]) -> Self {
        Self {
            num_segments: plan.num_segments(),
            partitions: plan
                .ranges()
                .iter()
                .zip(doc_counts)
                .enumerate()
                .map(|(i, (&(first, last), &docs))| PartitionEntry {
                    dir: partition_dir_name(i),
                    first_segment: first,
                    last_segment: last,
                    docs,
                })
                .collect(),
        }
    }

    pub fn write(&self, root: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(root.join(MANIFEST), text).with_context(|| format!("writing manifest in {}", root.display()))
    }

    pub fn read(root: &Path) -> anyhow::Result<Self> {
        let path = root.join(MANIFEST);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn partition_dir_name(i: usize) -> String {
    format!("part-{i}")
}

pub fn segment_file(root: &Path, segment: u32) -> PathBuf {
    root.join("segments").join(format!("seg-{segment:04}.fvi"))
}

/// A build root expands to its partitions; any other directory is taken
/// as a single partition.
pub fn expand_index_dirs(dirs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for d in dirs {
        if d.join(MANIFEST).is_file() {
            let m = Manifest::read(d)?;
            out.extend(m.partitions.iter().map(|p| d.join(&p.dir)));
        } else if d.is_dir() {
            out.push(d.clone());
        } else {
            bail!("index directory {} does not exist", d.display());
        }
    }
    Ok(out)
}

/// Query-side embedder matching an index of dimension `dim`.
pub fn query_embedder(cfg: &AppConfig, dim: usize) -> Arc<dyn Embedder> {
    match &cfg.embed.endpoint {
        Some(url) => Arc::new(RemoteEmbedder::new(url.clone(), dim, cfg.timeout()).with_batch_size(cfg.embed.batch_size)),
        None => Arc::new(HashingEmbedder::new(EmbeddingSpec {
            dim,
            max_tokens: cfg.embed.max_tokens,
        })),
    }
}

pub fn load_lexical(dir: &Path) -> anyhow::Result<Option<LexicalIndex>> {
    let path = dir.join(LEXICAL_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    Ok(Some(LexicalIndex::load(&path).with_context(|| format!("loading {}", path.display()))?))
}

pub fn load_shard(cfg: &AppConfig, dir: &Path, name: String) -> anyhow::Result<LocalShard> {
    let mut shard = LocalShard::new(name);
    let lexical = load_lexical(dir)?;
    let dense_path = dir.join(DENSE_FILE);
    if lexical.is_none() && !dense_path.is_file() {
        bail!("{} holds neither {LEXICAL_FILE} nor {DENSE_FILE}", dir.display());
    }
    if let Some(lex) = lexical {
        shard = shard.with_lexical(Arc::new(lex));
    }
    if dense_path.is_file() {
        let dense = FlatVectorIndex::load(&dense_path).with_context(|| format!("loading {}", dense_path.display()))?;
        let emb = query_embedder(cfg, dense.dim());
        shard = shard.with_dense(Arc::new(dense), emb);
    }
    Ok(shard)
}
