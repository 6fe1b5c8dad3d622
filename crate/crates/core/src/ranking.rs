//! The universal retrieval result: scored documents in a total order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
    #[serde(default)]
    pub shard: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    /// Score from the stage that produced the candidate, kept once a later
    /// stage has rescored the document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_stage_score: Option<f64>,
}

impl ScoredDoc {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        Self {
            doc_id: doc_id.into(),
            score,
            shard: 0,
            url: None,
            title: None,
            body: None,
            first_stage_score: None,
        }
    }

    pub fn with_shard(mut self, shard: usize) -> Self {
        self.shard = shard;
        self
    }
}

/// Score descending, then doc id ascending.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

pub fn compare_scored(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    rank_order(a.score, &a.doc_id, b.score, &b.doc_id)
}

/// Keeps the best `k` items of `items` under `cmp` and returns them sorted.
pub fn top_k_by<T, F>(mut items: Vec<T>, k: usize, mut cmp: F) -> Vec<T>
where
    F: FnMut(&T, &T) -> Ordering,
{
    if k == 0 {
        return Vec::new();
    }
    if items.len() > k {
        items.select_nth_unstable_by(k - 1, &mut cmp);
        items.truncate(k);
    }
    items.sort_unstable_by(cmp);
    items
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<ScoredDoc>,
}

impl RankedList {
    pub fn new(query_id: impl Into<String>, entries: Vec<ScoredDoc>) -> Self {
        Self {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// Checks the ordering invariant: every adjacent pair is in rank order.
    pub fn is_sorted(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| compare_scored(&w[0], &w[1]) != Ordering::Greater)
    }
}
