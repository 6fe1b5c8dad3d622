//! Reranker training data: anchor-text queries paired with BM25 negatives,
//! and judged queries paired with seeded random negatives drawn from the top
//! of a ranking.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::fnv1a64;
use crate::evalkit::{Qrels, RunFile};
use crate::federation::{Aggregator, SearchMode, ShardQuery, StatsMode};
use crate::lexindex::{Field, LexicalIndex};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("retrieval failed: {0}")]
    RetrievalFailure(String),
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub anchor_text: String,
    pub target_doc_id: String,
}

/// Parses `target_doc_id<TAB>anchor_text`.
pub fn parse_anchor_line(line: &str) -> Result<AnchorRecord, String> {
    let (target, text) = line
        .split_once('\t')
        .ok_or_else(|| "expected `target_doc_id<TAB>anchor_text`".to_string())?;
    let (target, text) = (target.trim(), text.trim());
    if target.is_empty() || text.is_empty() {
        return Err("target id and anchor text must be non-empty".into());
    }
    Ok(AnchorRecord {
        anchor_text: text.to_string(),
        target_doc_id: target.to_string(),
    })
}

/// Reads an anchor TSV. Malformed lines are logged, counted and skipped.
pub fn read_anchors<R: BufRead>(reader: R) -> Result<(Vec<AnchorRecord>, usize), TrainError> {
    let mut anchors = Vec::new();
    let mut malformed = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_anchor_line(&line) {
            Ok(a) => anchors.push(a),
            Err(msg) => {
                log::warn!("anchor line {}: {msg}; skipped", i + 1);
                malformed += 1;
            }
        }
    }
    Ok((anchors, malformed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_bm25_negatives: usize,
    pub pool_depth: usize,
    pub n_random_negatives: usize,
    pub rng_seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_bm25_negatives: 30,
            pool_depth: 100,
            n_random_negatives: 10,
            rng_seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.n_bm25_negatives == 0 || self.pool_depth == 0 || self.n_random_negatives == 0 {
            return Err(TrainError::InvalidConfig("all counts must be positive".into()));
        }
        if self.n_random_negatives > self.pool_depth {
            return Err(TrainError::InvalidConfig(format!(
                "n_random_negatives ({}) exceeds pool_depth ({})",
                self.n_random_negatives, self.pool_depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query: String,
    pub positive: String,
    pub negatives: Vec<String>,
    pub short_count: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_texts: Option<Vec<String>>,
}

impl TrainingExample {
    fn new(query: String, positive: String, negatives: Vec<String>, requested: usize) -> Self {
        Self {
            query,
            positive,
            short_count: negatives.len() < requested,
            negatives,
            positive_text: None,
            negative_texts: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenStats {
    pub emitted: usize,
    pub short_count: usize,
    pub skipped_missing_target: usize,
    pub skipped_missing_ranking: usize,
    pub skipped_missing_query_text: usize,
}

/// BM25 retrieval over the body field, as used to mine negatives.
pub trait LexicalRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<String>, TrainError>;

    fn contains(&self, doc_id: &str) -> Result<bool, TrainError>;
}

impl LexicalRetriever for LexicalIndex {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<String>, TrainError> {
        Ok(self
            .search(query, k, Field::Body)
            .into_iter()
            .map(|h| h.doc_id)
            .collect())
    }

    fn contains(&self, doc_id: &str) -> Result<bool, TrainError> {
        Ok(LexicalIndex::contains(self, doc_id))
    }
}

/// Retrieval through a federating aggregator. Blocks on `runtime`, so it
/// must be used from outside that runtime's worker threads.
pub struct FederatedRetriever<'a> {
    aggregator: &'a Aggregator,
    runtime: tokio::runtime::Handle,
}

impl<'a> FederatedRetriever<'a> {
    pub fn new(aggregator: &'a Aggregator, runtime: tokio::runtime::Handle) -> Self {
        Self { aggregator, runtime }
    }
}

impl LexicalRetriever for FederatedRetriever<'_> {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<String>, TrainError> {
        let q = ShardQuery::new(query, k, SearchMode::Lexical).with_stats(StatsMode::Global);
        let out = self
            .runtime
            .block_on(self.aggregator.search(&q))
            .map_err(|e| TrainError::RetrievalFailure(e.to_string()))?;
        if out.degraded {
            return Err(TrainError::RetrievalFailure(format!(
                "{} shard(s) failed",
                out.failures.len()
            )));
        }
        Ok(out.list.entries.into_iter().map(|h| h.doc_id).collect())
    }

    fn contains(&self, doc_id: &str) -> Result<bool, TrainError> {
        self.runtime.block_on(async {
            for shard in 0..self.aggregator.shards().len() {
                let found = self
                    .aggregator
                    .fetch_doc(shard, doc_id)
                    .await
                    .map_err(|e| TrainError::RetrievalFailure(e.to_string()))?;
                if found.is_some() {
                    return Ok(true);
                }
            }
            Ok(false)
        })
    }
}

/// For each anchor, runs BM25 with the anchor text and keeps the first
/// `n_bm25_negatives` hits that are not the target. Anchors whose target is
/// not in the corpus are skipped. Output follows input order.
pub fn gen_anchor_examples<R: LexicalRetriever + Sync>(
    anchors: &[AnchorRecord],
    retriever: &R,
    cfg: &SamplingConfig,
) -> Result<(Vec<TrainingExample>, GenStats), TrainError> {
    cfg.validate()?;
    let n = cfg.n_bm25_negatives;
    let results: Vec<Option<TrainingExample>> = anchors
        .par_iter()
        .map(|a| {
            if !retriever.contains(&a.target_doc_id)? {
                log::warn!("anchor target `{}` not in corpus; skipped", a.target_doc_id);
                return Ok(None);
            }
            let negatives: Vec<String> = retriever
                .retrieve(&a.anchor_text, n + 1)?
                .into_iter()
                .filter(|d| d != &a.target_doc_id)
                .take(n)
                .collect();
            Ok(Some(TrainingExample::new(
                a.anchor_text.clone(),
                a.target_doc_id.clone(),
                negatives,
                n,
            )))
        })
        .collect::<Result<_, TrainError>>()?;
    let mut stats = GenStats::default();
    let mut examples = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Some(ex) => {
                stats.short_count += usize::from(ex.short_count);
                examples.push(ex);
            }
            None => stats.skipped_missing_target += 1,
        }
    }
    stats.emitted = examples.len();
    Ok((examples, stats))
}

/// Per-query RNG seed; independent of the order queries are processed in.
pub fn query_seed(global_seed: u64, query_id: &str) -> u64 {
    let mut bytes = global_seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(query_id.as_bytes());
    fnv1a64(&bytes)
}

/// For each judged (query, positive) pair, samples `n_random_negatives`
/// uniformly without replacement from the ranking's top `pool_depth`, after
/// removing every judged-relevant document of that query. Queries are
/// processed in id order and positives in doc id order; negatives are
/// emitted in rank order.
pub fn gen_ranking_negatives(
    qrels: &Qrels,
    ranking: &RunFile,
    query_texts: &HashMap<String, String>,
    cfg: &SamplingConfig,
) -> Result<(Vec<TrainingExample>, GenStats), TrainError> {
    cfg.validate()?;
    let mut stats = GenStats::default();
    let mut examples = Vec::new();
    for qid in qrels.query_ids() {
        let positives = qrels.relevant(qid);
        if positives.is_empty() {
            continue;
        }
        let Some(entries) = ranking.entries(qid) else {
            log::warn!("query {qid} has no ranking; skipped");
            stats.skipped_missing_ranking += 1;
            continue;
        };
        let Some(text) = query_texts.get(qid) else {
            log::warn!("query {qid} has no text; skipped");
            stats.skipped_missing_query_text += 1;
            continue;
        };
        let judged: HashSet<&str> = positives.iter().copied().collect();
        let pool: Vec<&str> = entries
            .iter()
            .take(cfg.pool_depth)
            .map(|e| e.doc_id.as_str())
            .filter(|d| !judged.contains(d))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(query_seed(cfg.rng_seed, qid));
        for positive in positives {
            let take = cfg.n_random_negatives.min(pool.len());
            let mut picked = rand::seq::index::sample(&mut rng, pool.len(), take).into_vec();
            picked.sort_unstable();
            let negatives = picked.into_iter().map(|i| pool[i].to_string()).collect();
            let ex = TrainingExample::new(text.clone(), positive.to_string(), negatives, cfg.n_random_negatives);
            stats.short_count += usize::from(ex.short_count);
            examples.push(ex);
        }
    }
    stats.emitted = examples.len();
    Ok((examples, stats))
}

/// Fills in resolved texts (title and body joined by a newline) for trainer
/// consumption. Unknown ids resolve to empty strings.
pub fn attach_texts(examples: &mut [TrainingExample], lookup: impl Fn(&str) -> Option<String>) {
    for ex in examples {
        ex.positive_text = Some(lookup(&ex.positive).unwrap_or_default());
        ex.negative_texts = Some(ex.negatives.iter().map(|d| lookup(d).unwrap_or_default()).collect());
    }
}

pub fn write_examples<W: Write>(mut out: W, examples: &[TrainingExample]) -> io::Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::Document;
    use crate::lexindex::{build_index, Bm25Params};
    use crate::ranking::{RankedList, ScoredDoc};

    fn corpus(n: usize) -> LexicalIndex {
        let docs = (0..n).map(|i| Document {
            id: format!("d{i:02}"),
            segment: 0,
            url: String::new(),
            title: String::new(),
            // every doc matches "common"; doc i repeats it i+1 times
            body: format!("{} filler{i}", vec!["common"; i + 1].join(" ")),
        });
        build_index(docs, Bm25Params::default()).unwrap()
    }

    #[test]
    fn anchor_lines() {
        let (anchors, bad) =
            read_anchors("d1\tsan diego\nno tab here\n\td2\nd3\tutah\n".as_bytes()).unwrap();
        assert_eq!(bad, 2);
        assert_eq!(anchors.len(), 2);
        assert_eq!(anchors[0].target_doc_id, "d1");
        assert_eq!(anchors[0].anchor_text, "san diego");
    }

    #[test]
    fn target_ranked_first_gives_next_ranks() {
        let idx = corpus(40);
        let ranked = idx.retrieve("common", 40).unwrap();
        let target = ranked[0].clone();
        let anchors = vec![AnchorRecord {
            anchor_text: "common".into(),
            target_doc_id: target,
        }];
        let (ex, stats) = gen_anchor_examples(&anchors, &idx, &SamplingConfig::default()).unwrap();
        assert_eq!(stats.emitted, 1);
        assert_eq!(ex[0].negatives, ranked[1..31].to_vec());
        assert!(!ex[0].short_count);
    }

    #[test]
    fn small_corpus_short_count_and_missing_target() {
        let idx = corpus(20);
        let anchors = vec![
            AnchorRecord {
                anchor_text: "common".into(),
                target_doc_id: "d05".into(),
            },
            AnchorRecord {
                anchor_text: "common".into(),
                target_doc_id: "nope".into(),
            },
        ];
        let (ex, stats) = gen_anchor_examples(&anchors, &idx, &SamplingConfig::default()).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].negatives.len(), 19);
        assert!(ex[0].short_count);
        assert!(!ex[0].negatives.contains(&"d05".to_string()));
        assert_eq!(stats.skipped_missing_target, 1);
        assert_eq!(stats.short_count, 1);
    }

    fn run_with(qid: &str, ids: &[String]) -> RunFile {
        let mut run = RunFile::new("t");
        let entries = ids
            .iter()
            .enumerate()
            .map(|(i, d)| ScoredDoc::new(d.clone(), 1000.0 - i as f64))
            .collect();
        run.push_ranked(&RankedList::new(qid, entries));
        run
    }

    #[test]
    fn ranking_negatives_seeded_and_exclusive() {
        let ids: Vec<String> = (0..150).map(|i| format!("r{i:03}")).collect();
        let run = run_with("q1", &ids);
        let mut qrels = Qrels::default();
        qrels.insert("q1", "p", 1);
        let texts = HashMap::from([("q1".to_string(), "some query".to_string())]);
        let cfg = SamplingConfig {
            rng_seed: 42,
            ..Default::default()
        };
        let (a, _) = gen_ranking_negatives(&qrels, &run, &texts, &cfg).unwrap();
        let (b, _) = gen_ranking_negatives(&qrels, &run, &texts, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].negatives.len(), 10);
        for n in &a[0].negatives {
            let rank: usize = n[1..].parse().unwrap();
            assert!(rank < 100, "{n} outside the pool");
        }
        let other = SamplingConfig { rng_seed: 43, ..cfg };
        let (c, _) = gen_ranking_negatives(&qrels, &run, &texts, &other).unwrap();
        assert_ne!(a[0].negatives, c[0].negatives);
    }

    #[test]
    fn ranking_negatives_exclude_all_positives() {
        let mut ids: Vec<String> = (0..95).map(|i| format!("pos{i}")).collect();
        ids.extend((0..5).map(|i| format!("neg{i}")));
        let mut qrels = Qrels::default();
        for i in 0..95 {
            qrels.insert("q", &format!("pos{i}"), 1);
        }
        qrels.insert("q", "neg0", 0);
        let texts = HashMap::from([("q".to_string(), "text".to_string())]);
        let (ex, stats) =
            gen_ranking_negatives(&qrels, &run_with("q", &ids), &texts, &SamplingConfig::default())
                .unwrap();
        assert_eq!(ex.len(), 95);
        for e in &ex {
            assert_eq!(e.negatives, ["neg0", "neg1", "neg2", "neg3", "neg4"]);
            assert!(e.short_count);
        }
        assert_eq!(stats.short_count, 95);
    }

    #[test]
    fn query_missing_from_ranking_skipped() {
        let mut qrels = Qrels::default();
        qrels.insert("absent", "p", 1);
        let texts = HashMap::from([("absent".to_string(), "t".to_string())]);
        let (ex, stats) =
            gen_ranking_negatives(&qrels, &RunFile::new("t"), &texts, &SamplingConfig::default())
                .unwrap();
        assert!(ex.is_empty());
        assert_eq!(stats.skipped_missing_ranking, 1);
    }

    #[test]
    fn config_validation() {
        let bad = SamplingConfig {
            n_random_negatives: 200,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(SamplingConfig {
            n_bm25_negatives: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn jsonl_output_shape() {
        let mut ex = vec![TrainingExample::new("q".into(), "p".into(), vec!["n1".into()], 2)];
        let mut plain = Vec::new();
        write_examples(&mut plain, &ex).unwrap();
        assert_eq!(
            String::from_utf8(plain).unwrap(),
            "{\"query\":\"q\",\"positive\":\"p\",\"negatives\":[\"n1\"],\"short_count\":true}\n"
        );
        attach_texts(&mut ex, |id| (id == "p").then(|| "text".to_string()));
        assert_eq!(ex[0].positive_text.as_deref(), Some("text"));
        assert_eq!(ex[0].negative_texts.as_deref(), Some(&[String::new()][..]));
    }
}
