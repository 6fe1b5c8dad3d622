//! Multi-field inverted index with Okapi BM25 ranking and stored fields.
//!
//! Documents are added to a [`LexicalIndexBuilder`]; `commit` freezes it into
//! an immutable [`LexicalIndex`] that can be searched from any number of
//! threads. Each of the url, title and body fields has its own term
//! dictionary, postings and length statistics, and the original field values
//! are stored verbatim for lookup.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::docmodel::Document;
use crate::ranking::{rank_order, top_k_by, ScoredDoc};

const SNAPSHOT_VERSION: u8 = 1;
const SNAPSHOT_MAGIC: &[u8; 4] = b"SSLX";

#[derive(Debug, Error)]
pub enum LexError {
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("invalid collection statistics: {0}")]
    InvalidStats(String),
    #[error("document `{0}` not found")]
    NotFound(String),
    #[error("corrupt index snapshot: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl From<DecodeError> for LexError {
    fn from(e: DecodeError) -> Self {
        LexError::Corrupt(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Url,
    Title,
    Body,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::Url, Field::Title, Field::Body];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Field::Url => "url",
            Field::Title => "title",
            Field::Body => "body",
        }
    }

    fn text(self, doc: &Document) -> &str {
        match self {
            Field::Url => &doc.url,
            Field::Title => &doc.title,
            Field::Body => &doc.body,
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Field {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "url" => Ok(Field::Url),
            "title" => Ok(Field::Title),
            "body" => Ok(Field::Body),
            other => Err(format!("unknown field `{other}` (expected url, title or body)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, LexError> {
        let params = Self { k1, b };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), LexError> {
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Err(LexError::InvalidParams(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(LexError::InvalidParams(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

/// Lowercases and splits on maximal runs of non-alphanumeric characters.
pub fn analyze(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
pub fn idf(df: u64, n: u64) -> f64 {
    let (df, n) = (df as f64, n as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

#[inline]
fn saturate(tf: u32, dl: u32, avgdl: f64, params: &Bm25Params) -> f64 {
    let tf = f64::from(tf);
    let norm = 1.0 - params.b + params.b * f64::from(dl) / avgdl;
    tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
}

pub fn bm25_term_score(
    tf: u32,
    df: u64,
    n: u64,
    dl: u32,
    avgdl: f64,
    params: &Bm25Params,
) -> Result<f64, LexError> {
    if tf == 0 {
        return Ok(0.0);
    }
    if df == 0 || df > n {
        return Err(LexError::InvalidStats(format!("df={df} must be in 1..={n}")));
    }
    if avgdl.is_nan() || avgdl <= 0.0 {
        return Err(LexError::InvalidStats(format!("avgdl must be > 0, got {avgdl}")));
    }
    Ok(idf(df, n) * saturate(tf, dl, avgdl, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub field: Field,
    pub doc_count: u64,
    pub total_tokens: u64,
}

impl FieldStats {
    pub fn avgdl(&self) -> f64 {
        if self.doc_count == 0 {
            0.0
        } else {
            self.total_tokens as f64 / self.doc_count as f64
        }
    }
}

/// Collection statistics for one field, as published between shards so that
/// every shard can score against corpus-wide N, df and avgdl.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldCorpusStats {
    pub doc_count: u64,
    pub total_tokens: u64,
    pub df: HashMap<String, u64>,
}

impl FieldCorpusStats {
    pub fn avgdl(&self) -> f64 {
        if self.doc_count == 0 {
            0.0
        } else {
            self.total_tokens as f64 / self.doc_count as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub fields: BTreeMap<Field, FieldCorpusStats>,
}

impl CorpusStats {
    /// Sums per-shard statistics into corpus-wide statistics.
    pub fn combine<'a>(parts: impl IntoIterator<Item = &'a CorpusStats>) -> CorpusStats {
        let mut out = CorpusStats::default();
        for part in parts {
            for (field, stats) in &part.fields {
                let acc = out.fields.entry(*field).or_default();
                acc.doc_count += stats.doc_count;
                acc.total_tokens += stats.total_tokens;
                for (term, df) in &stats.df {
                    *acc.df.entry(term.clone()).or_insert(0) += df;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct FieldIndex {
    terms: HashMap<String, Vec<Posting>>,
    doc_lens: Vec<u32>,
    total_tokens: u64,
}

impl FieldIndex {
    fn add(&mut self, ord: u32, text: &str) {
        let tokens = analyze(text);
        let mut tfs: HashMap<String, u32> = HashMap::new();
        for t in tokens.iter() {
            *tfs.entry(t.clone()).or_insert(0) += 1;
        }
        for (term, tf) in tfs {
            self.terms.entry(term).or_default().push(Posting { doc: ord, tf });
        }
        let len = u32::try_from(tokens.len()).expect("field shorter than 2^32 tokens");
        self.doc_lens.push(len);
        self.total_tokens += u64::from(len);
    }
}

#[derive(Debug, Default)]
pub struct LexicalIndexBuilder {
    params: Bm25Params,
    docs: Vec<Document>,
    by_id: HashMap<String, u32>,
    fields: [FieldIndex; 3],
}

impl LexicalIndexBuilder {
    pub fn new(params: Bm25Params) -> Result<Self, LexError> {
        params.validate()?;
        Ok(Self {
            params,
            ..Default::default()
        })
    }

    pub fn add(&mut self, doc: Document) -> Result<(), LexError> {
        if self.by_id.contains_key(&doc.id) {
            return Err(LexError::DuplicateDocId(doc.id));
        }
        let ord = u32::try_from(self.docs.len()).expect("fewer than 2^32 documents per index");
        for field in Field::ALL {
            self.fields[field.slot()].add(ord, field.text(&doc));
        }
        self.by_id.insert(doc.id.clone(), ord);
        self.docs.push(doc);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn commit(self) -> LexicalIndex {
        LexicalIndex {
            params: self.params,
            docs: self.docs,
            by_id: self.by_id,
            fields: self.fields,
        }
    }
}

pub fn build_index(
    docs: impl IntoIterator<Item = Document>,
    params: Bm25Params,
) -> Result<LexicalIndex, LexError> {
    let mut builder = LexicalIndexBuilder::new(params)?;
    for doc in docs {
        builder.add(doc)?;
    }
    Ok(builder.commit())
}

/// Committed, immutable index.
#[derive(Debug, Clone, PartialEq)]
pub struct LexicalIndex {
    params: Bm25Params,
    docs: Vec<Document>,
    by_id: HashMap<String, u32>,
    fields: [FieldIndex; 3],
}

struct ScoringStats<'a> {
    n: u64,
    avgdl: f64,
    global_df: Option<&'a HashMap<String, u64>>,
}

impl LexicalIndex {
    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn field_stats(&self, field: Field) -> FieldStats {
        FieldStats {
            field,
            doc_count: self.docs.len() as u64,
            total_tokens: self.fields[field.slot()].total_tokens,
        }
    }

    pub fn term_stats(&self, field: Field, term: &str) -> Option<&[Posting]> {
        self.fields[field.slot()].terms.get(term).map(Vec::as_slice)
    }

    pub fn doc_len(&self, field: Field, doc_id: &str) -> Option<u32> {
        let ord = *self.by_id.get(doc_id)?;
        Some(self.fields[field.slot()].doc_lens[ord as usize])
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.by_id.contains_key(doc_id)
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn get_stored(&self, doc_id: &str) -> Result<&Document, LexError> {
        self.by_id
            .get(doc_id)
            .map(|&ord| &self.docs[ord as usize])
            .ok_or_else(|| LexError::NotFound(doc_id.to_string()))
    }

    /// Local statistics of this index in publishable form.
    pub fn corpus_stats(&self) -> CorpusStats {
        let fields = Field::ALL
            .into_iter()
            .map(|field| {
                let fi = &self.fields[field.slot()];
                let df = fi
                    .terms
                    .iter()
                    .map(|(t, p)| (t.clone(), p.len() as u64))
                    .collect();
                let stats = FieldCorpusStats {
                    doc_count: self.docs.len() as u64,
                    total_tokens: fi.total_tokens,
                    df,
                };
                (field, stats)
            })
            .collect();
        CorpusStats { fields }
    }

    /// Top-k by BM25 over `field` using this index's own statistics.
    pub fn search(&self, query: &str, k: usize, field: Field) -> Vec<ScoredDoc> {
        let stats = self.field_stats(field);
        let scoring = ScoringStats {
            n: stats.doc_count,
            avgdl: stats.avgdl(),
            global_df: None,
        };
        self.search_inner(query, k, field, &scoring)
            .expect("local statistics are consistent")
    }

    /// Top-k by BM25 with N, df and avgdl taken from corpus-wide statistics;
    /// tf and document length stay local.
    pub fn search_with_stats(
        &self,
        query: &str,
        k: usize,
        field: Field,
        global: &CorpusStats,
    ) -> Result<Vec<ScoredDoc>, LexError> {
        let stats = global
            .fields
            .get(&field)
            .ok_or_else(|| LexError::InvalidStats(format!("no statistics for field {field}")))?;
        if stats.doc_count < self.docs.len() as u64 {
            return Err(LexError::InvalidStats(format!(
                "corpus N={} smaller than local N={}",
                stats.doc_count,
                self.docs.len()
            )));
        }
        let scoring = ScoringStats {
            n: stats.doc_count,
            avgdl: stats.avgdl(),
            global_df: Some(&stats.df),
        };
        self.search_inner(query, k, field, &scoring)
    }

    fn search_inner(
        &self,
        query: &str,
        k: usize,
        field: Field,
        stats: &ScoringStats<'_>,
    ) -> Result<Vec<ScoredDoc>, LexError> {
        if k == 0 || self.docs.is_empty() {
            return Ok(Vec::new());
        }
        let fi = &self.fields[field.slot()];
        let mut acc = vec![0.0f64; self.docs.len()];
        let mut touched = vec![false; self.docs.len()];
        let mut hits: Vec<u32> = Vec::new();
        // term-at-a-time; repeated query tokens each contribute a term
        for token in analyze(query) {
            let Some(postings) = fi.terms.get(&token) else {
                continue;
            };
            let df = match stats.global_df {
                None => postings.len() as u64,
                Some(dfs) => {
                    let df = dfs.get(&token).copied().unwrap_or(0);
                    if df < postings.len() as u64 {
                        return Err(LexError::InvalidStats(format!(
                            "corpus df={df} for `{token}` below local df={}",
                            postings.len()
                        )));
                    }
                    df
                }
            };
            let term_idf = idf(df, stats.n);
            for p in postings {
                let slot = p.doc as usize;
                acc[slot] += term_idf * saturate(p.tf, fi.doc_lens[slot], stats.avgdl, &self.params);
                if !touched[slot] {
                    touched[slot] = true;
                    hits.push(p.doc);
                }
            }
        }
        let scored: Vec<(u32, f64)> = hits.into_iter().map(|d| (d, acc[d as usize])).collect();
        let top = top_k_by(scored, k, |a, b| {
            rank_order(a.1, &self.docs[a.0 as usize].id, b.1, &self.docs[b.0 as usize].id)
        });
        Ok(top
            .into_iter()
            .map(|(ord, score)| {
                let doc = &self.docs[ord as usize];
                let mut hit = ScoredDoc::new(doc.id.clone(), score);
                hit.url = Some(doc.url.clone());
                hit.title = Some(doc.title.clone());
                hit
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::default();
        enc.u8(SNAPSHOT_VERSION);
        enc.bytes(SNAPSHOT_MAGIC);
        enc.f64(self.params.k1);
        enc.f64(self.params.b);
        enc.u64(self.docs.len() as u64);
        for d in &self.docs {
            enc.str(&d.id);
            enc.u32(d.segment);
            enc.str(&d.url);
            enc.str(&d.title);
            enc.str(&d.body);
        }
        for fi in &self.fields {
            for &len in &fi.doc_lens {
                enc.u32(len);
            }
            let mut terms: Vec<_> = fi.terms.iter().collect();
            terms.sort_unstable_by(|a, b| a.0.cmp(b.0));
            enc.u64(terms.len() as u64);
            for (term, postings) in terms {
                enc.str(term);
                enc.u32(postings.len() as u32);
                for p in postings {
                    enc.u32(p.doc);
                    enc.u32(p.tf);
                }
            }
        }
        let crc = crc32fast::hash(enc.as_slice());
        enc.u32(crc);
        enc.into_inner()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, LexError> {
        if data.len() < 1 + SNAPSHOT_MAGIC.len() + 4 {
            return Err(LexError::Corrupt("file too short".into()));
        }
        if data[0] != SNAPSHOT_VERSION {
            return Err(LexError::Corrupt(format!("unsupported version {}", data[0])));
        }
        if &data[1..5] != SNAPSHOT_MAGIC {
            return Err(LexError::Corrupt("bad magic".into()));
        }
        let (body, tail) = data.split_at(data.len() - 4);
        let stored_crc = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored_crc {
            return Err(LexError::Corrupt("checksum mismatch".into()));
        }
        let mut dec = Decoder::new(body);
        dec.u8()?;
        dec.take(SNAPSHOT_MAGIC.len())?;
        let params = Bm25Params {
            k1: dec.f64()?,
            b: dec.f64()?,
        };
        params.validate()?;
        let n = dec.u64()? as usize;
        let mut docs = Vec::with_capacity(n.min(dec.remaining()));
        let mut by_id = HashMap::with_capacity(n.min(dec.remaining()));
        for ord in 0..n {
            let doc = Document {
                id: dec.string()?,
                segment: dec.u32()?,
                url: dec.string()?,
                title: dec.string()?,
                body: dec.string()?,
            };
            if by_id.insert(doc.id.clone(), ord as u32).is_some() {
                return Err(LexError::Corrupt(format!("duplicate id `{}`", doc.id)));
            }
            docs.push(doc);
        }
        let mut fields: [FieldIndex; 3] = Default::default();
        for fi in fields.iter_mut() {
            fi.doc_lens = (0..n).map(|_| dec.u32()).collect::<Result<_, _>>()?;
            fi.total_tokens = fi.doc_lens.iter().map(|&l| u64::from(l)).sum();
            let term_count = dec.u64()?;
            for _ in 0..term_count {
                let term = dec.string()?;
                let len = dec.u32()? as usize;
                let mut postings = Vec::with_capacity(len.min(dec.remaining() / 8));
                for _ in 0..len {
                    let p = Posting {
                        doc: dec.u32()?,
                        tf: dec.u32()?,
                    };
                    if p.doc as usize >= n || p.tf == 0 {
                        return Err(LexError::Corrupt(format!("bad posting for `{term}`")));
                    }
                    postings.push(p);
                }
                fi.terms.insert(term, postings);
            }
        }
        if dec.remaining() != 0 {
            return Err(LexError::Corrupt("trailing bytes".into()));
        }
        Ok(Self {
            params,
            docs,
            by_id,
            fields,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LexError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LexError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: &str, body: &str) -> Document {
        Document {
            id: id.into(),
            segment: 0,
            url: format!("https://example.com/{id}"),
            title: String::new(),
            body: body.into(),
        }
    }

    fn toy() -> LexicalIndex {
        build_index(
            vec![
                doc("d1", "san diego history"),
                doc("d2", "san francisco bay"),
                doc("d3", "history of utah settlement"),
            ],
            Bm25Params::default(),
        )
        .unwrap()
    }

    /// Scores every document independently from its raw text.
    fn brute_force(docs: &[Document], query: &str, k: usize, p: &Bm25Params) -> Vec<(String, f64)> {
        let analyzed: Vec<Vec<String>> = docs.iter().map(|d| analyze(&d.body)).collect();
        let n = docs.len() as f64;
        let avgdl = analyzed.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let q = analyze(query);
        let mut out = Vec::new();
        for (d, toks) in docs.iter().zip(&analyzed) {
            let mut score = 0.0;
            let mut matched = false;
            for qt in &q {
                let tf = toks.iter().filter(|t| *t == qt).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                matched = true;
                let df = analyzed.iter().filter(|ts| ts.contains(qt)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let dl = toks.len() as f64;
                score += idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * dl / avgdl));
            }
            if matched {
                out.push((d.id.clone(), score));
            }
        }
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out.truncate(k);
        out
    }

    #[test]
    fn analyzer_rules() {
        assert_eq!(analyze("San Diego's history"), ["san", "diego", "s", "history"]);
        assert!(analyze("").is_empty());
        assert_eq!(analyze("BM25 2022"), ["bm25", "2022"]);
        assert_eq!(analyze("--Ünïcode__ÉTÉ!!"), ["ünïcode", "été"]);
    }

    #[test]
    fn term_score_fixtures() {
        let p = Bm25Params::default();
        assert_eq!(bm25_term_score(0, 2, 3, 3, 10.0 / 3.0, &p).unwrap(), 0.0);
        let a = bm25_term_score(1, 2, 3, 3, 10.0 / 3.0, &p).unwrap();
        assert!((a - 0.4791).abs() < 1e-4, "{a}");
        let b = bm25_term_score(1, 2, 3, 4, 10.0 / 3.0, &p).unwrap();
        assert!((b - 0.4528).abs() < 1e-4, "{b}");
    }

    #[test]
    fn term_score_rejects_bad_stats() {
        let p = Bm25Params::default();
        assert!(matches!(bm25_term_score(1, 4, 3, 3, 1.0, &p), Err(LexError::InvalidStats(_))));
        assert!(matches!(bm25_term_score(1, 1, 3, 3, 0.0, &p), Err(LexError::InvalidStats(_))));
        assert!(matches!(bm25_term_score(1, 0, 3, 3, 1.0, &p), Err(LexError::InvalidStats(_))));
    }

    #[test]
    fn params_validated() {
        assert!(Bm25Params::new(0.0, 0.4).is_err());
        assert!(Bm25Params::new(1.2, 1.5).is_err());
        assert!(Bm25Params::new(1.2, 0.75).is_ok());
    }

    #[test]
    fn toy_corpus_stats_and_search() {
        let idx = toy();
        let body = idx.field_stats(Field::Body);
        assert_eq!(body.doc_count, 3);
        assert!((body.avgdl() - 10.0 / 3.0).abs() < 1e-12);

        let hits = idx.search("san history", 10, Field::Body);
        let got: Vec<_> = hits.iter().map(|h| (h.doc_id.as_str(), h.score)).collect();
        let want = [("d1", 0.9582), ("d2", 0.4791), ("d3", 0.4528)];
        assert_eq!(got.len(), 3);
        for ((gid, gs), (wid, ws)) in got.iter().zip(want) {
            assert_eq!(*gid, wid);
            assert!((gs - ws).abs() < 1e-4, "{gid}: {gs} vs {ws}");
        }

        let top1 = idx.search("san history", 1, Field::Body);
        assert_eq!(top1.len(), 1);
        assert_eq!(top1[0].doc_id, "d1");
        assert!(idx.search("zzz", 10, Field::Body).is_empty());
        assert!(idx.search("san", 0, Field::Body).is_empty());
    }

    #[test]
    fn query_token_multiplicity_counts() {
        let idx = toy();
        let once = idx.search("utah", 1, Field::Body)[0].score;
        let twice = idx.search("utah utah", 1, Field::Body)[0].score;
        assert!((twice - 2.0 * once).abs() < 1e-12);
    }

    #[test]
    fn fields_are_searched_separately() {
        let mut d = doc("t", "nothing here");
        d.title = "Utah Gold".into();
        let idx = build_index(vec![d, doc("u", "utah")], Bm25Params::default()).unwrap();
        let title_hits = idx.search("gold", 5, Field::Title);
        assert_eq!(title_hits.len(), 1);
        assert_eq!(title_hits[0].doc_id, "t");
        assert!(idx.search("gold", 5, Field::Body).is_empty());
        let url_hits = idx.search("example", 5, Field::Url);
        assert_eq!(url_hits.len(), 2);
    }

    #[test]
    fn empty_index() {
        let idx = build_index(Vec::new(), Bm25Params::default()).unwrap();
        assert_eq!(idx.field_stats(Field::Body).doc_count, 0);
        assert!(idx.search("anything", 10, Field::Body).is_empty());
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = build_index(vec![doc("d1", "a"), doc("d1", "b")], Bm25Params::default())
            .unwrap_err();
        assert!(matches!(err, LexError::DuplicateDocId(id) if id == "d1"));
    }

    #[test]
    fn stored_fields_byte_identical() {
        let mut d = doc("m", "Grüße aus 東京 🚀");
        d.title = "Ωmega\ttitle".into();
        let original = d.clone();
        let idx = build_index(vec![d], Bm25Params::default()).unwrap();
        let stored = idx.get_stored("m").unwrap();
        assert_eq!(stored.body.as_bytes(), original.body.as_bytes());
        assert_eq!(stored.title.as_bytes(), original.title.as_bytes());
        assert_eq!(stored.url.as_bytes(), original.url.as_bytes());
        assert!(matches!(idx.get_stored("missing"), Err(LexError::NotFound(_))));
    }

    #[test]
    fn snapshot_roundtrip_and_corruption() {
        let idx = toy();
        let bytes = idx.to_bytes();
        assert_eq!(bytes[0], SNAPSHOT_VERSION);
        let back = LexicalIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, idx);
        assert_eq!(bytes, back.to_bytes());

        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(matches!(LexicalIndex::from_bytes(&flipped), Err(LexError::Corrupt(_))));
        let mut bad_version = bytes.clone();
        bad_version[0] = 9;
        assert!(matches!(LexicalIndex::from_bytes(&bad_version), Err(LexError::Corrupt(_))));
        assert!(matches!(
            LexicalIndex::from_bytes(&bytes[..bytes.len() - 9]),
            Err(LexError::Corrupt(_))
        ));
    }

    #[test]
    fn global_stats_from_single_index_match_local() {
        let idx = toy();
        let stats = idx.corpus_stats();
        let local = idx.search("san history", 10, Field::Body);
        let global = idx.search_with_stats("san history", 10, Field::Body, &stats).unwrap();
        assert_eq!(local, global);
    }

    const VOCAB: &[&str] = &[
        "alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota", "kappa", "lambda",
        "mu",
    ];

    fn arb_corpus() -> impl Strategy<Value = Vec<Document>> {
        prop::collection::vec(prop::collection::vec(prop::sample::select(VOCAB), 0..15), 1..40)
            .prop_map(|bodies| {
                bodies
                    .into_iter()
                    .enumerate()
                    .map(|(i, words)| doc(&format!("doc{i}"), &words.join(" ")))
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn matches_brute_force(docs in arb_corpus(),
                               q in prop::collection::vec(prop::sample::select(VOCAB), 1..5),
                               k in 1usize..50) {
            let query = q.join(" ");
            let p = Bm25Params::default();
            let idx = build_index(docs.clone(), p).unwrap();
            let got = idx.search(&query, k, Field::Body);
            let want = brute_force(&docs, &query, k, &p);
            prop_assert_eq!(got.len(), want.len());
            for (g, (wid, ws)) in got.iter().zip(&want) {
                prop_assert_eq!(&g.doc_id, wid);
                prop_assert!((g.score - ws).abs() < 1e-6);
            }
        }

        #[test]
        fn tf_monotone(tf in 1u32..50, df in 1u64..100, extra in 0u64..1000, dl in 0u32..500,
                       avgdl in 0.5f64..300.0, k1 in 0.1f64..3.0, b in 0.0f64..=1.0) {
            let p = Bm25Params { k1, b };
            let n = df + extra;
            let lo = bm25_term_score(tf, df, n, dl, avgdl, &p).unwrap();
            let hi = bm25_term_score(tf + 1, df, n, dl, avgdl, &p).unwrap();
            prop_assert!(hi > lo);
            prop_assert!(lo >= 0.0);
            prop_assert!(lo < idf(df, n) * (k1 + 1.0));
        }

        #[test]
        fn df_antitone(tf in 1u32..50, df in 1u64..100, extra in 1u64..1000, dl in 0u32..500,
                       avgdl in 0.5f64..300.0) {
            let p = Bm25Params::default();
            let n = df + extra;
            let lo_df = bm25_term_score(tf, df, n, dl, avgdl, &p).unwrap();
            let hi_df = bm25_term_score(tf, df + 1, n, dl, avgdl, &p).unwrap();
            prop_assert!(hi_df < lo_df);
        }

        #[test]
        fn deterministic_and_snapshot_stable(docs in arb_corpus(),
                                             q in prop::collection::vec(prop::sample::select(VOCAB), 1..4)) {
            let query = q.join(" ");
            let a = build_index(docs.clone(), Bm25Params::default()).unwrap();
            let b = build_index(docs, Bm25Params::default()).unwrap();
            let c = LexicalIndex::from_bytes(&a.to_bytes()).unwrap();
            let ra = a.search(&query, 20, Field::Body);
            prop_assert_eq!(&ra, &b.search(&query, 20, Field::Body));
            prop_assert_eq!(&ra, &c.search(&query, 20, Field::Body));
        }
    }
}
