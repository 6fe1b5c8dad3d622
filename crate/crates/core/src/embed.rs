//! Text embedding behind the `/embed` contract of the model server, plus a
//! deterministic feature-hashing embedder for offline builds and tests.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denseindex::EmbeddingSpec;
use crate::lexindex::analyze;
use crate::remote::{get_json, http_client, join_url, post_json, RemoteError};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text {0} is empty")]
    EmptyText(usize),
    #[error("embedding service: {0}")]
    Remote(#[from] RemoteError),
    #[error("embedding {index} has {got} components, expected {expected}")]
    BadVector {
        index: usize,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f32>>,
}

#[async_trait]
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Signed feature hashing of analyzed tokens, truncated to `max_tokens` and
/// L2-normalized. Texts sharing vocabulary get positive inner products.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    spec: EmbeddingSpec,
}

impl HashingEmbedder {
    pub fn new(spec: EmbeddingSpec) -> Self {
        assert!(spec.dim > 0 && spec.max_tokens > 0, "embedding spec must be positive");
        Self { spec }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f32; self.spec.dim];
        for token in analyze(text).iter().take(self.spec.max_tokens) {
            let h = fnv1a64(token.as_bytes());
            let bucket = (h % self.spec.dim as u64) as usize;
            v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

#[async_trait]
impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText(i));
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ServerSpec {
    pub dim: usize,
    pub max_tokens: usize,
    #[serde(default)]
    pub uses_url: bool,
}

/// Client for a model server's `POST /embed`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: reqwest::Client,
    base_url: String,
    dim: usize,
    batch_size: usize,
}

impl RemoteEmbedder {
    pub fn new(base_url: impl Into<String>, dim: usize, timeout: Duration) -> Self {
        Self {
            client: http_client(timeout),
            base_url: base_url.into(),
            dim,
            batch_size: 32,
        }
    }

    /// Reads the dimension from the server's `GET /spec`.
    pub async fn connect(base_url: impl Into<String>, timeout: Duration) -> Result<Self, EmbedError> {
        let base_url = base_url.into();
        let client = http_client(timeout);
        let spec: ServerSpec = get_json(&client, &join_url(&base_url, "spec"), &[]).await?;
        Ok(Self {
            client,
            base_url,
            dim: spec.dim,
            batch_size: 32,
        })
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }
}

#[async_trait]
impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let url = join_url(&self.base_url, "embed");
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            let req = EmbedRequest {
                texts: batch.to_vec(),
            };
            let resp: EmbedResponse = post_json(&self.client, &url, &req).await?;
            if resp.vectors.len() != batch.len() {
                return Err(RemoteError::ShapeMismatch {
                    expected: batch.len(),
                    got: resp.vectors.len(),
                }
                .into());
            }
            for v in resp.vectors {
                if v.len() != self.dim || v.iter().any(|x| !x.is_finite()) {
                    return Err(EmbedError::BadVector {
                        index: out.len(),
                        expected: self.dim,
                        got: v.len(),
                    });
                }
                out.push(v);
            }
        }
        Ok(out)
    }
}
