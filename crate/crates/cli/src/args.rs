//! Flag groups shared by several subcommands, and their overlay onto the
//! loaded configuration.

use std::path::PathBuf;

use clap::Args;
use shardsearch::federation::{SearchMode, StatsMode};
use shardsearch::Field;

use crate::config::{overlay, overlay_vec, usage, AppConfig};

#[derive(Debug, Clone, Args)]
pub struct Bm25Args {
    /// BM25 term-frequency saturation
    #[arg(long, env = "SHARDSEARCH_K1")]
    pub k1: Option<f64>,
    /// BM25 length normalization in [0, 1]
    #[arg(long, env = "SHARDSEARCH_B")]
    pub b: Option<f64>,
}

impl Bm25Args {
    pub fn apply(&self, cfg: &mut AppConfig) {
        overlay(&mut cfg.bm25.k1, self.k1);
        overlay(&mut cfg.bm25.b, self.b);
    }
}

#[derive(Debug, Clone, Args)]
pub struct PartitionArgs {
    /// Number of partitions (shards) to build
    #[arg(long, env = "SHARDSEARCH_PARTITIONS")]
    pub partitions: Option<u32>,
    /// Total number of corpus segments; inferred from the corpus when omitted
    #[arg(long, env = "SHARDSEARCH_NUM_SEGMENTS")]
    pub num_segments: Option<u32>,
}

impl PartitionArgs {
    pub fn apply(&self, cfg: &mut AppConfig) {
        overlay(&mut cfg.partition.partitions, self.partitions);
        if self.num_segments.is_some() {
            cfg.partition.num_segments = self.num_segments;
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EmbedArgs {
    /// Model server base URL for embeddings (built-in hashing embedder when omitted)
    #[arg(long, env = "SHARDSEARCH_EMBED_URL")]
    pub embed_url: Option<String>,
    /// Embedding dimension for the built-in embedder
    #[arg(long, env = "SHARDSEARCH_DIM")]
    pub dim: Option<usize>,
    /// Tokens kept per text before embedding
    #[arg(long, env = "SHARDSEARCH_MAX_TOKENS")]
    pub max_tokens: Option<usize>,
    /// Texts per embedding request
    #[arg(long, env = "SHARDSEARCH_EMBED_BATCH_SIZE")]
    pub embed_batch_size: Option<usize>,
}

impl EmbedArgs {
    pub fn apply(&self, cfg: &mut AppConfig) {
        if self.embed_url.is_some() {
            cfg.embed.endpoint = self.embed_url.clone();
        }
        overlay(&mut cfg.embed.dim, self.dim);
        overlay(&mut cfg.embed.max_tokens, self.max_tokens);
        overlay(&mut cfg.embed.batch_size, self.embed_batch_size);
    }
}

/// Where queries go: a running aggregator, a set of shard services
/// federated in-process, or local index directories.
#[derive(Debug, Clone, Args)]
pub struct TargetArgs {
    /// Base URL of a running aggregator
    #[arg(long, env = "SHARDSEARCH_AGGREGATOR")]
    pub aggregator: Option<String>,
    /// Shard base URLs (comma-separated or repeated)
    #[arg(long, value_delimiter = ',', env = "SHARDSEARCH_SHARDS")]
    pub shards: Vec<String>,
    /// Index directories: a build root or individual partitions
    #[arg(long = "index-dir", value_delimiter = ',', env = "SHARDSEARCH_INDEX_DIRS")]
    pub index_dirs: Vec<PathBuf>,
    /// Per-request timeout in milliseconds
    #[arg(long, env = "SHARDSEARCH_TIMEOUT_MS")]
    pub timeout_ms: Option<u64>,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

impl TargetArgs {
    /// A target given here replaces every target from lower layers.
    pub fn apply(&self, cfg: &mut AppConfig) {
        if self.aggregator.is_some() || !self.shards.is_empty() || !self.index_dirs.is_empty() {
            cfg.aggregator = self.aggregator.clone();
            cfg.shards.clear();
            cfg.index_dirs.clear();
        }
        overlay_vec(&mut cfg.shards, self.shards.clone());
        overlay_vec(&mut cfg.index_dirs, self.index_dirs.clone());
        overlay(&mut cfg.timeout_ms, self.timeout_ms);
        self.embed.apply(cfg);
    }
}

#[derive(Debug, Clone, Args)]
pub struct QueryInput {
    /// A single query
    #[arg(long, conflicts_with = "queries")]
    pub q: Option<String>,
    /// Query file, one `qid<TAB>text` per line
    #[arg(long)]
    pub queries: Option<PathBuf>,
}

impl QueryInput {
    pub fn load(&self) -> anyhow::Result<Vec<(String, String)>> {
        match (&self.q, &self.queries) {
            (Some(q), None) => Ok(vec![("q0".to_string(), q.clone())]),
            (None, Some(path)) => crate::commands::read_queries(path),
            _ => Err(usage("one of --q or --queries is required")),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RetrievalArgs {
    /// First-stage retrieval mode
    #[arg(long, default_value = "lexical")]
    pub mode: SearchMode,
    /// Collection statistics for lexical scoring
    #[arg(long, default_value = "per-shard")]
    pub stats: StatsMode,
    /// Field searched in lexical mode
    #[arg(long, default_value = "body")]
    pub field: Field,
}
