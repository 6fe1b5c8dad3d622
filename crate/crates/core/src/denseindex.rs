//! Flat dense-vector index: raw fixed-width float32 rows searched exhaustively
//! by inner product.
//!
//! File layout (`.fvi`, little-endian):
//!
//! ```text
//! "FVI1" | dim: u32 | count: u64                  header, 16 bytes
//! count x (len: u32, UTF-8 id bytes)              id table
//! count x dim x f32, row-major                    vectors
//! crc32(id table + vectors): u32
//! ```

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Decoder, Encoder};
use crate::ranking::{rank_order, top_k_by, ScoredDoc};

pub const FVI_MAGIC: &[u8; 4] = b"FVI1";
const HEADER_LEN: usize = 16;
const PAR_THRESHOLD: usize = 4096;

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("vector for `{0}` has a non-finite component")]
    NonFiniteValue(String),
    #[error("invalid dimension {0}")]
    InvalidDimension(usize),
    #[error("corrupt vector file: {0}")]
    CorruptFile(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub dim: usize,
    pub max_tokens: usize,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        Self {
            dim: 768,
            max_tokens: 512,
        }
    }
}

/// Inner product accumulated in float32, strictly left to right.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).fold(0.0f32, |acc, (x, y)| acc + x * y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatVectorIndex {
    dim: usize,
    ids: Vec<String>,
    by_id: HashMap<String, usize>,
    data: Vec<f32>,
}

impl FlatVectorIndex {
    pub fn new(dim: usize) -> Result<Self, DenseError> {
        if dim == 0 || u32::try_from(dim).is_err() {
            return Err(DenseError::InvalidDimension(dim));
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            by_id: HashMap::new(),
            data: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn get(&self, doc_id: &str) -> Option<&[f32]> {
        self.by_id.get(doc_id).map(|&row| self.vector(row))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dim))
    }

    pub fn add(&mut self, doc_id: impl Into<String>, vector: &[f32]) -> Result<(), DenseError> {
        let doc_id = doc_id.into();
        if vector.len() != self.dim {
            return Err(DenseError::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(DenseError::NonFiniteValue(doc_id));
        }
        if self.by_id.contains_key(&doc_id) {
            return Err(DenseError::DuplicateId(doc_id));
        }
        self.by_id.insert(doc_id.clone(), self.ids.len());
        self.ids.push(doc_id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    /// Exact top-k by inner product; ties go to the smaller doc id. Returns
    /// every entry when `k` exceeds the index size.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<ScoredDoc>, DenseError> {
        if query.len() != self.dim {
            return Err(DenseError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(DenseError::NonFiniteValue("<query>".into()));
        }
        if k == 0 || self.is_empty() {
            return Ok(Vec::new());
        }
        let rows = self.data.par_chunks_exact(self.dim).with_min_len(PAR_THRESHOLD);
        let scores: Vec<(usize, f32)> = rows.map(|v| dot(query, v)).enumerate().collect();
        let top = top_k_by(scores, k, |a, b| {
            rank_order(f64::from(a.1), &self.ids[a.0], f64::from(b.1), &self.ids[b.0])
        });
        Ok(top
            .into_iter()
            .map(|(row, score)| ScoredDoc::new(self.ids[row].clone(), f64::from(score)))
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_capacity(HEADER_LEN + self.data.len() * 4 + self.ids.len() * 16);
        enc.bytes(FVI_MAGIC);
        enc.u32(self.dim as u32);
        enc.u64(self.ids.len() as u64);
        for id in &self.ids {
            enc.str(id);
        }
        for &v in &self.data {
            enc.f32(v);
        }
        let crc = crc32fast::hash(&enc.as_slice()[HEADER_LEN..]);
        enc.u32(crc);
        enc.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DenseError> {
        let corrupt = |msg: &str| DenseError::CorruptFile(msg.to_string());
        if bytes.len() < HEADER_LEN + 4 {
            return Err(corrupt("file shorter than header"));
        }
        if &bytes[..4] != FVI_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut dec = Decoder::new(bytes);
        dec.take(4).expect("length checked");
        let dim = dec.u32().expect("length checked") as usize;
        let count = dec.u64().expect("length checked");
        if dim == 0 {
            return Err(corrupt("zero dimension"));
        }
        let mut index = FlatVectorIndex::new(dim)?;
        let mut ids = Vec::new();
        for _ in 0..count {
            let id = dec
                .string()
                .map_err(|e| DenseError::CorruptFile(format!("id table: {e}")))?;
            ids.push(id);
        }
        let expected = count
            .checked_mul(dim as u64)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(4))
            .ok_or_else(|| corrupt("declared size overflows"))?;
        if dec.remaining() as u64 != expected {
            return Err(DenseError::CorruptFile(format!(
                "payload holds {} bytes, header declares {}",
                dec.remaining(),
                expected
            )));
        }
        let payload = &bytes[HEADER_LEN..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        if crc32fast::hash(payload) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let mut row = Vec::with_capacity(dim);
        for id in ids {
            row.clear();
            for _ in 0..dim {
                row.push(dec.f32().expect("size checked"));
            }
            index.add(id, &row).map_err(|e| DenseError::CorruptFile(e.to_string()))?;
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), DenseError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DenseError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Concatenates parts in order into one index of dimension `dim`.
pub fn merge_dense(parts: &[FlatVectorIndex], dim: usize) -> Result<FlatVectorIndex, DenseError> {
    let mut out = FlatVectorIndex::new(dim)?;
    let total: usize = parts.iter().map(FlatVectorIndex::len).sum();
    out.ids.reserve(total);
    out.data.reserve(total * dim);
    for part in parts {
        if part.dim != dim {
            return Err(DenseError::DimensionMismatch {
                expected: dim,
                got: part.dim,
            });
        }
        for (id, v) in part.iter() {
            out.add(id, v)?;
        }
    }
    Ok(out)
}

pub fn persist_dense(index: &FlatVectorIndex, path: &Path) -> Result<(), DenseError> {
    index.save(path)
}

pub fn load_dense(path: &Path) -> Result<FlatVectorIndex, DenseError> {
    FlatVectorIndex::load(path)
}
