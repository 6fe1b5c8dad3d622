//! Synthetic corpora and brute-force oracles shared by the integration tests.
//! The oracles score from raw text and never touch index internals.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shardsearch::lexindex::{analyze, Bm25Params};
use shardsearch::Document;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Word `w{i}` with a skewed (roughly Zipfian) distribution over `vocab`.
pub fn zipf_word(rng: &mut ChaCha8Rng, vocab: usize) -> String {
    let u: f64 = rng.random();
    let idx = ((vocab as f64).powf(u) - 1.0) as usize;
    format!("w{}", idx.min(vocab - 1))
}

pub fn synth_corpus(n_docs: usize, vocab: usize, num_segments: u32, seed: u64) -> Vec<Document> {
    let mut rng = rng(seed);
    (0..n_docs)
        .map(|i| {
            let len = rng.random_range(5..120);
            let body: Vec<String> = (0..len).map(|_| zipf_word(&mut rng, vocab)).collect();
            let title: Vec<String> = (0..rng.random_range(1..6)).map(|_| zipf_word(&mut rng, vocab)).collect();
            Document {
                id: format!("doc{i:05}"),
                segment: rng.random_range(0..num_segments),
                url: format!("https://site{}.example/page/{i}", i % 37),
                title: title.join(" "),
                body: body.join(" "),
            }
        })
        .collect()
}

pub fn random_query(rng: &mut ChaCha8Rng, vocab: usize) -> String {
    let n = rng.random_range(1..5);
    (0..n).map(|_| zipf_word(rng, vocab)).collect::<Vec<_>>().join(" ")
}

/// Reference BM25 over document bodies: every document is scored from its
/// own token counts with the formula written out in full.
pub struct Bm25Oracle {
    ids: Vec<String>,
    counts: Vec<HashMap<String, u32>>,
    lens: Vec<usize>,
    df: HashMap<String, usize>,
    avgdl: f64,
    params: Bm25Params,
}

impl Bm25Oracle {
    pub fn new(docs: &[Document], params: Bm25Params) -> Self {
        let mut counts = Vec::with_capacity(docs.len());
        let mut lens = Vec::with_capacity(docs.len());
        let mut df: HashMap<String, usize> = HashMap::new();
        for d in docs {
            let toks = analyze(&d.body);
            let mut c: HashMap<String, u32> = HashMap::new();
            for t in &toks {
                *c.entry(t.clone()).or_default() += 1;
            }
            for t in c.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            lens.push(toks.len());
            counts.push(c);
        }
        let avgdl = lens.iter().sum::<usize>() as f64 / docs.len() as f64;
        Self {
            ids: docs.iter().map(|d| d.id.clone()).collect(),
            counts,
            lens,
            df,
            avgdl,
            params,
        }
    }

    pub fn search(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        let n = self.ids.len() as f64;
        let (k1, b) = (self.params.k1, self.params.b);
        let q = analyze(query);
        let mut scored = Vec::new();
        for i in 0..self.ids.len() {
            let mut score = 0.0;
            let mut matched = false;
            for t in &q {
                let Some(&tf) = self.counts[i].get(t) else { continue };
                matched = true;
                let df = self.df[t] as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let tf = f64::from(tf);
                let dl = self.lens[i] as f64;
                score += idf * (tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / self.avgdl)));
            }
            if matched {
                scored.push((self.ids[i].clone(), score));
            }
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    /// Documents whose body contains at least one query token.
    pub fn matching(&self, query: &str) -> Vec<String> {
        let q = analyze(query);
        (0..self.ids.len())
            .filter(|&i| q.iter().any(|t| self.counts[i].contains_key(t)))
            .map(|i| self.ids[i].clone())
            .collect()
    }
}

pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = rng(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect()
}

/// Exhaustive inner-product ranking with float32 left-to-right accumulation.
pub fn dense_oracle(ids: &[String], vectors: &[Vec<f32>], query: &[f32], k: usize) -> Vec<(String, f32)> {
    let mut scored: Vec<(String, f32)> = ids
        .iter()
        .zip(vectors)
        .map(|(id, v)| {
            let mut acc = 0.0f32;
            for j in 0..query.len() {
                acc += query[j] * v[j];
            }
            (id.clone(), acc)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}
