//! Relevance judgments, TREC run files, query filtering and the metrics
//! reported for first-stage recall and reranking quality.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexindex::analyze;
use crate::ranking::RankedList;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("query has no relevant documents")]
    NoRelevant,
    #[error("invalid cutoff {0}")]
    InvalidCutoff(usize),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

fn format_err(line: usize, msg: impl Into<String>) -> EvalError {
    EvalError::Format {
        line,
        msg: msg.into(),
    }
}

/// Graded judgments per query; grade >= 1 counts as relevant.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, i32>>,
}

impl Qrels {
    pub fn insert(&mut self, qid: &str, doc_id: &str, grade: i32) -> bool {
        self.judgments
            .entry(qid.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade)
            .is_none()
    }

    /// Parses `qid 0 docid grade` lines; a repeated (query, doc) pair is an error.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, EvalError> {
        let mut qrels = Qrels::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            let [qid, _iter, doc, grade] = cols[..] else {
                return Err(format_err(lineno, format!("expected 4 columns, got {}", cols.len())));
            };
            let grade: i32 = grade
                .parse()
                .map_err(|_| format_err(lineno, format!("bad grade `{grade}`")))?;
            if !qrels.insert(qid, doc, grade) {
                return Err(format_err(lineno, format!("duplicate judgment for ({qid}, {doc})")));
            }
        }
        Ok(qrels)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn judgments(&self, qid: &str) -> Option<&BTreeMap<String, i32>> {
        self.judgments.get(qid)
    }

    pub fn grade(&self, qid: &str, doc_id: &str) -> Option<i32> {
        self.judgments.get(qid)?.get(doc_id).copied()
    }

    /// Relevant documents of a query in doc id order.
    pub fn relevant(&self, qid: &str) -> Vec<&str> {
        self.judgments
            .get(qid)
            .map(|m| {
                m.iter()
                    .filter(|(_, &g)| g >= 1)
                    .map(|(d, _)| d.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn relevant_set(&self, qid: &str) -> HashSet<String> {
        self.relevant(qid).into_iter().map(str::to_string).collect()
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
}

/// System rankings keyed by query id, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    pub tag: String,
    queries: IndexMap<String, Vec<RunEntry>>,
}

impl RunFile {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            queries: IndexMap::new(),
        }
    }

    /// Adds a ranked list; ranks are assigned 1..n in list order.
    pub fn push_ranked(&mut self, list: &RankedList) {
        let entries = list
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| RunEntry {
                doc_id: e.doc_id.clone(),
                rank: i + 1,
                score: e.score,
            })
            .collect();
        self.queries.insert(list.query_id.clone(), entries);
    }

    /// Parses TREC six-column lines `qid Q0 docid rank score tag`. Per query,
    /// ranks must be exactly 1..n and scores non-increasing with rank.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, EvalError> {
        let mut run = RunFile::default();
        let mut first_line: IndexMap<String, usize> = IndexMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            let [qid, _q0, doc, rank, score, tag] = cols[..] else {
                return Err(format_err(lineno, format!("expected 6 columns, got {}", cols.len())));
            };
            let rank: usize = rank
                .parse()
                .map_err(|_| format_err(lineno, format!("bad rank `{rank}`")))?;
            let score: f64 = score
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| format_err(lineno, format!("bad score `{score}`")))?;
            if run.tag.is_empty() {
                run.tag = tag.to_string();
            }
            first_line.entry(qid.to_string()).or_insert(lineno);
            run.queries.entry(qid.to_string()).or_default().push(RunEntry {
                doc_id: doc.to_string(),
                rank,
                score,
            });
        }
        for (qid, entries) in run.queries.iter_mut() {
            let lineno = first_line[qid];
            entries.sort_by_key(|e| e.rank);
            let mut seen = HashSet::new();
            for (i, e) in entries.iter().enumerate() {
                if e.rank != i + 1 {
                    return Err(format_err(lineno, format!("query {qid}: ranks are not 1..n")));
                }
                if !seen.insert(e.doc_id.as_str()) {
                    return Err(format_err(
                        lineno,
                        format!("query {qid}: document {} ranked twice", e.doc_id),
                    ));
                }
            }
            if entries.windows(2).any(|w| w[1].score > w[0].score) {
                return Err(format_err(lineno, format!("query {qid}: scores increase with rank")));
            }
        }
        Ok(run)
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        let tag = if self.tag.is_empty() { "run" } else { &self.tag };
        for (qid, entries) in &self.queries {
            for e in entries {
                writeln!(out, "{qid} Q0 {} {} {} {tag}", e.doc_id, e.rank, e.score)?;
            }
        }
        Ok(())
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn entries(&self, qid: &str) -> Option<&[RunEntry]> {
        self.queries.get(qid).map(Vec::as_slice)
    }

    pub fn ranking(&self, qid: &str) -> Vec<&str> {
        self.entries(qid)
            .map(|es| es.iter().map(|e| e.doc_id.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Reads `qid<TAB>text` lines.
pub fn parse_queries<R: BufRead>(reader: R) -> Result<Vec<(String, String)>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (qid, text) = line
            .split_once('\t')
            .ok_or_else(|| format_err(i + 1, "expected `qid<TAB>text`"))?;
        out.push((qid.trim().to_string(), text.to_string()));
    }
    Ok(out)
}

/// Drops queries whose text analyzes to at most one token and queries with
/// no relevant judgment. Order is preserved.
pub fn filter_queries(queries: &[(String, String)], qrels: &Qrels) -> Vec<(String, String)> {
    queries
        .iter()
        .filter(|(qid, text)| analyze(text).len() > 1 && !qrels.relevant(qid).is_empty())
        .cloned()
        .collect()
}

fn hits_in_top<S: AsRef<str>>(ranking: &[S], relevant: &HashSet<String>, k: usize) -> usize {
    ranking
        .iter()
        .take(k)
        .filter(|d| relevant.contains(d.as_ref()))
        .count()
}

pub fn recall_at_k<S: AsRef<str>>(
    ranking: &[S],
    relevant: &HashSet<String>,
    k: usize,
) -> Result<f64, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::NoRelevant);
    }
    Ok(hits_in_top(ranking, relevant, k) as f64 / relevant.len() as f64)
}

/// Missing positions past the end of a short run count as non-relevant.
/// `k == 0` yields 0.
pub fn precision_at_k<S: AsRef<str>>(ranking: &[S], relevant: &HashSet<String>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    hits_in_top(ranking, relevant, k) as f64 / k as f64
}

pub fn reciprocal_rank<S: AsRef<str>>(ranking: &[S], relevant: &HashSet<String>) -> f64 {
    ranking
        .iter()
        .position(|d| relevant.contains(d.as_ref()))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub recall_cutoffs: Vec<usize>,
    pub precision_cutoffs: Vec<usize>,
    /// Ranks considered for MRR; `None` uses the whole run.
    pub mrr_depth: Option<usize>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            recall_cutoffs: vec![500, 1000],
            precision_cutoffs: vec![5, 10],
            mrr_depth: None,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let all = self.recall_cutoffs.iter().chain(&self.precision_cutoffs);
        match all.chain(self.mrr_depth.as_ref()).find(|&&k| k == 0) {
            Some(&k) => Err(EvalError::InvalidCutoff(k)),
            None => Ok(()),
        }
    }

    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.recall_cutoffs.iter().map(|k| format!("Recall@{k}")).collect();
        names.push("MRR".into());
        names.extend(self.precision_cutoffs.iter().map(|k| format!("P@{k}")));
        names
    }
}

pub type MetricValues = IndexMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub num_queries: usize,
    /// Queries present in the qrels without any relevant judgment.
    pub skipped_no_relevant: usize,
    /// Evaluated queries the run has no ranking for; they score 0.
    pub missing_from_run: usize,
    pub mean: MetricValues,
    pub per_query: BTreeMap<String, MetricValues>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let width = self.mean.keys().map(String::len).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}", "metric", "value");
        for (name, value) in &self.mean {
            let _ = writeln!(out, "{name:<width$}  {value:>8.4}");
        }
        let _ = writeln!(out, "{:<width$}  {:>8}", "queries", self.num_queries);
        out
    }
}

fn query_metrics(ranking: &[&str], relevant: &HashSet<String>, cfg: &MetricConfig) -> MetricValues {
    let mut values = MetricValues::new();
    for &k in &cfg.recall_cutoffs {
        let r = recall_at_k(ranking, relevant, k).expect("relevant set checked non-empty");
        values.insert(format!("Recall@{k}"), r);
    }
    let depth = cfg.mrr_depth.unwrap_or(ranking.len()).min(ranking.len());
    values.insert("MRR".into(), reciprocal_rank(&ranking[..depth], relevant));
    for &k in &cfg.precision_cutoffs {
        values.insert(format!("P@{k}"), precision_at_k(ranking, relevant, k));
    }
    values
}

/// Evaluates every qrels query that has at least one relevant document.
/// Queries missing from the run score 0; run-only queries are ignored.
pub fn evaluate_run(run: &RunFile, qrels: &Qrels, cfg: &MetricConfig) -> Result<MetricReport, EvalError> {
    cfg.validate()?;
    let names = cfg.metric_names();
    let mut per_query = BTreeMap::new();
    let mut skipped = 0;
    let mut missing = 0;
    for qid in qrels.query_ids() {
        let relevant = qrels.relevant_set(qid);
        if relevant.is_empty() {
            skipped += 1;
            continue;
        }
        if run.entries(qid).is_none() {
            missing += 1;
        }
        per_query.insert(qid.to_string(), query_metrics(&run.ranking(qid), &relevant, cfg));
    }
    let n = per_query.len();
    let mean = names
        .into_iter()
        .map(|name| {
            let total: f64 = per_query.values().map(|m: &MetricValues| m[&name]).sum();
            let avg = if n == 0 { 0.0 } else { total / n as f64 };
            (name, avg)
        })
        .collect();
    Ok(MetricReport {
        num_queries: n,
        skipped_no_relevant: skipped,
        missing_from_run: missing,
        mean,
        per_query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(ids: &[&str]) -> HashSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn recall_cases() {
        let rel = set(&["a", "b", "c"]);
        assert!((recall_at_k(&["a", "x", "b"], &rel, 10).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(recall_at_k(&["x", "y"], &rel, 10).unwrap(), 0.0);
        assert_eq!(recall_at_k(&["c", "b", "a"], &rel, 3).unwrap(), 1.0);
        assert!(matches!(recall_at_k(&["a"], &set(&[]), 1), Err(EvalError::NoRelevant)));
    }

    #[test]
    fn precision_cases() {
        let rel = set(&["a", "b"]);
        assert_eq!(precision_at_k(&["a", "x", "b", "y", "z", "q"], &rel, 5), 0.4);
        assert_eq!(precision_at_k(&["x", "a", "y"], &rel, 5), 0.2);
        let none: Vec<String> = (0..10).map(|i| format!("n{i}")).collect();
        assert_eq!(precision_at_k(&none, &rel, 10), 0.0);
    }

    #[test]
    fn reciprocal_rank_cases() {
        let rel = set(&["r"]);
        assert_eq!(reciprocal_rank(&["a", "b", "c", "r"], &rel), 0.25);
        assert_eq!(reciprocal_rank(&["a", "b"], &rel), 0.0);
        assert_eq!(reciprocal_rank(&["r", "b"], &rel), 1.0);
    }

    #[test]
    fn filter_rule() {
        let mut qrels = Qrels::default();
        qrels.insert("q1", "d1", 1);
        qrels.insert("q2", "d2", 1);
        qrels.insert("q3", "d3", 0);
        let queries = vec![
            ("q1".to_string(), "weather".to_string()),
            ("q2".to_string(), "san diego".to_string()),
            ("q3".to_string(), "utah history".to_string()),
            ("q4".to_string(), "no judgments here".to_string()),
        ];
        let kept = filter_queries(&queries, &qrels);
        assert_eq!(kept, vec![("q2".to_string(), "san diego".to_string())]);
    }

    #[test]
    fn qrels_parse_errors() {
        let err = Qrels::parse("q1 0 d1 1\nq1 0 d2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, EvalError::Format { line: 2, .. }));
        let err = Qrels::parse("q1 0 d1 x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, EvalError::Format { line: 1, .. }));
        let err = Qrels::parse("q1 0 d1 1\n\nq1 0 d1 2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, EvalError::Format { line: 3, .. }));
    }

    #[test]
    fn run_parse_validation() {
        let ok = "q1 Q0 a 2 1.0 t\nq1 Q0 b 1 2.0 t\n";
        let run = RunFile::parse(ok.as_bytes()).unwrap();
        assert_eq!(run.ranking("q1"), ["b", "a"]);
        assert!(RunFile::parse("q1 Q0 a 1 1.0 t\nq1 Q0 b 3 0.5 t\n".as_bytes()).is_err());
        assert!(RunFile::parse("q1 Q0 a 1 1.0 t\nq1 Q0 b 2 1.5 t\n".as_bytes()).is_err());
        assert!(RunFile::parse("q1 Q0 a 1 1.0 t\nq1 Q0 a 2 0.5 t\n".as_bytes()).is_err());
        let err = RunFile::parse("q1 Q0 a 1 1.0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, EvalError::Format { line: 1, .. }));
        assert!(RunFile::parse("q1 Q0 a 1 NaN t\n".as_bytes()).is_err());
    }

    #[test]
    fn mrr_mean_and_missing_queries() {
        let qrels = Qrels::parse("q1 0 a 1\nq2 0 r 2\nq3 0 z 1\nq4 0 y 0\n".as_bytes()).unwrap();
        let run = RunFile::parse(
            "q1 Q0 a 1 9 t\nq2 Q0 b 1 4 t\nq2 Q0 c 2 3 t\nq2 Q0 d 3 2 t\nq2 Q0 r 4 1 t\nq9 Q0 a 1 1 t\n"
                .as_bytes(),
        )
        .unwrap();
        let report = evaluate_run(&run, &qrels, &MetricConfig::default()).unwrap();
        assert_eq!(report.num_queries, 3);
        assert_eq!(report.skipped_no_relevant, 1);
        assert_eq!(report.missing_from_run, 1);
        assert!((report.mean["MRR"] - (1.0 + 0.25 + 0.0) / 3.0).abs() < 1e-15);
        assert_eq!(report.per_query["q3"]["Recall@1000"], 0.0);
        let keys: Vec<&str> = report.mean.keys().map(String::as_str).collect();
        assert_eq!(keys, ["Recall@500", "Recall@1000", "MRR", "P@5", "P@10"]);
        assert!(report.to_table().contains("Recall@1000"));
    }

    #[test]
    fn mrr_depth_cutoff() {
        let qrels = Qrels::parse("q 0 r 1\n".as_bytes()).unwrap();
        let run = RunFile::parse("q Q0 a 1 3 t\nq Q0 b 2 2 t\nq Q0 r 3 1 t\n".as_bytes()).unwrap();
        let cfg = MetricConfig {
            mrr_depth: Some(2),
            ..Default::default()
        };
        assert_eq!(evaluate_run(&run, &qrels, &cfg).unwrap().mean["MRR"], 0.0);
        let bad = MetricConfig {
            precision_cutoffs: vec![0],
            ..Default::default()
        };
        assert!(matches!(evaluate_run(&run, &qrels, &bad), Err(EvalError::InvalidCutoff(0))));
    }

    fn arb_case() -> impl Strategy<Value = (Vec<String>, HashSet<String>)> {
        (prop::collection::vec(0u16..60, 0..40), prop::collection::hash_set(0u16..60, 1..15)).prop_map(
            |(ranking, rel)| {
                let mut seen = HashSet::new();
                let ranking = ranking
                    .into_iter()
                    .filter(|d| seen.insert(*d))
                    .map(|d| format!("d{d}"))
                    .collect();
                (ranking, rel.into_iter().map(|d| format!("d{d}")).collect())
            },
        )
    }

    proptest! {
        #[test]
        fn metric_bounds_and_integrality((ranking, rel) in arb_case(), k in 1usize..50) {
            let r = recall_at_k(&ranking, &rel, k).unwrap();
            let p = precision_at_k(&ranking, &rel, k);
            let rr = reciprocal_rank(&ranking, &rel);
            for v in [r, p, rr] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let pk = p * k as f64;
            let rn = r * rel.len() as f64;
            prop_assert!((pk - pk.round()).abs() < 1e-9);
            prop_assert!((rn - rn.round()).abs() < 1e-9);
            prop_assert!(recall_at_k(&ranking, &rel, k + 1).unwrap() >= r);
        }

        #[test]
        fn promoting_relevant_never_hurts((ranking, rel) in arb_case(), k in 1usize..20) {
            if let Some(pos) = ranking.iter().position(|d| rel.contains(d)).filter(|&p| p > 0) {
                let mut better = ranking.clone();
                better.swap(pos - 1, pos);
                prop_assert!(reciprocal_rank(&better, &rel) >= reciprocal_rank(&ranking, &rel));
                prop_assert!(precision_at_k(&better, &rel, k) >= precision_at_k(&ranking, &rel, k));
            }
        }

        #[test]
        fn perfect_run_has_full_recall(rel in prop::collection::hash_set(0u16..500, 1..30)) {
            let mut qrels = Qrels::default();
            let mut run = RunFile::new("perfect");
            let mut list = RankedList::new("q", Vec::new());
            for (i, d) in rel.iter().enumerate() {
                qrels.insert("q", &format!("d{d}"), 1);
                list.entries.push(crate::ranking::ScoredDoc::new(format!("d{d}"), -(i as f64)));
            }
            run.push_ranked(&list);
            let cfg = MetricConfig { recall_cutoffs: vec![rel.len(), 1000], ..Default::default() };
            let report = evaluate_run(&run, &qrels, &cfg).unwrap();
            prop_assert_eq!(report.mean[&format!("Recall@{}", rel.len())], 1.0);
            prop_assert_eq!(report.mean["MRR"], 1.0);
        }

        #[test]
        fn run_write_parse_roundtrip(scores in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 1..10), 1..5)) {
            let mut run = RunFile::new("tag");
            for (q, mut s) in scores.into_iter().enumerate() {
                s.sort_by(|a, b| b.total_cmp(a));
                let entries = s.iter().enumerate()
                    .map(|(i, &sc)| crate::ranking::ScoredDoc::new(format!("doc{i}"), sc))
                    .collect();
                run.push_ranked(&RankedList::new(format!("q{q}"), entries));
            }
            let mut first = Vec::new();
            run.write(&mut first).unwrap();
            let parsed = RunFile::parse(first.as_slice()).unwrap();
            prop_assert_eq!(&parsed, &run);
            let mut second = Vec::new();
            parsed.write(&mut second).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}
