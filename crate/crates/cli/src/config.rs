//! Layered configuration: command-line flags, then `SHARDSEARCH_*`
//! environment variables, then the config file, then built-in defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shardsearch::evalkit::MetricConfig;
use shardsearch::rerank::RerankConfig;
use shardsearch::traingen::SamplingConfig;
use shardsearch::Bm25Params;

/// Bad invocation or configuration; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub partitions: u32,
    /// Inferred from the corpus (max segment + 1) when unset.
    pub num_segments: Option<u32>,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self {
            partitions: 4,
            num_segments: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    /// Model server base URL; the built-in hashing embedder is used when unset.
    pub endpoint: Option<String>,
    pub dim: usize,
    pub max_tokens: usize,
    pub batch_size: usize,
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self {
            endpoint: None,
            dim: 768,
            max_tokens: 512,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub corpus: Vec<PathBuf>,
    pub index_dirs: Vec<PathBuf>,
    pub shards: Vec<String>,
    pub aggregator: Option<String>,
    pub timeout_ms: u64,
    pub default_k: usize,
    pub partition: PartitionSection,
    pub bm25: Bm25Params,
    pub rerank: RerankConfig,
    /// `/score` endpoint used by `scorer = remote`.
    pub scorer_endpoint: Option<String>,
    pub sampling: SamplingConfig,
    pub metrics: MetricConfig,
    pub embed: EmbedSection,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            corpus: Vec::new(),
            index_dirs: Vec::new(),
            shards: Vec::new(),
            aggregator: None,
            timeout_ms: 30_000,
            default_k: 10,
            partition: PartitionSection::default(),
            bm25: Bm25Params::default(),
            rerank: RerankConfig::default(),
            scorer_endpoint: None,
            sampling: SamplingConfig::default(),
            metrics: MetricConfig::default(),
            embed: EmbedSection::default(),
        }
    }
}

impl AppConfig {
    /// TOML or JSON, chosen by file extension.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        match ext {
            "toml" => toml::from_str(&text)
                .map_err(|e| usage(format!("invalid config {}: {e}", path.display()))),
            "json" => serde_json::from_str(&text)
                .map_err(|e| usage(format!("invalid config {}: {e}", path.display()))),
            _ => Err(usage(format!(
                "config {} must end in .toml or .json",
                path.display()
            ))),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let field = |name: &str, msg: String| usage(format!("invalid config: {name}: {msg}"));
        self.bm25.validate().map_err(|e| field("bm25", e.to_string()))?;
        self.rerank.validate().map_err(|e| field("rerank", e.to_string()))?;
        self.sampling.validate().map_err(|e| field("sampling", e.to_string()))?;
        self.metrics.validate().map_err(|e| field("metrics", e.to_string()))?;
        if self.partition.partitions == 0 {
            return Err(field("partition.partitions", "must be at least 1".into()));
        }
        if let Some(s) = self.partition.num_segments {
            if s < self.partition.partitions {
                return Err(field(
                    "partition.num_segments",
                    format!("{s} segments cannot fill {} partitions", self.partition.partitions),
                ));
            }
        }
        if self.embed.dim == 0 {
            return Err(field("embed.dim", "must be positive".into()));
        }
        if self.embed.max_tokens == 0 {
            return Err(field("embed.max_tokens", "must be positive".into()));
        }
        if self.embed.batch_size == 0 {
            return Err(field("embed.batch_size", "must be positive".into()));
        }
        if self.timeout_ms == 0 {
            return Err(field("timeout_ms", "must be positive".into()));
        }
        if self.default_k == 0 {
            return Err(field("default_k", "must be positive".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> std::time::Duration {
        std::time::Duration::from_millis(self.timeout_ms)
    }
}

/// Replaces `slot` when a flag or environment value was given.
pub fn overlay<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn overlay_vec<T>(slot: &mut Vec<T>, value: Vec<T>) {
    if !value.is_empty() {
        *slot = value;
    }
}
