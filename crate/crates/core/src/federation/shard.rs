use std::sync::{Arc, RwLock};

use async_trait::async_trait;

use super::{SearchMode, Shard, ShardError, ShardQuery, StatsMode, StoredDoc};
use crate::denseindex::FlatVectorIndex;
use crate::embed::Embedder;
use crate::lexindex::{CorpusStats, LexicalIndex};
use crate::ranking::ScoredDoc;

/// In-process shard over committed, immutable indexes.
pub struct LocalShard {
    name: String,
    lexical: Option<Arc<LexicalIndex>>,
    dense: Option<Arc<FlatVectorIndex>>,
    embedder: Option<Arc<dyn Embedder>>,
    global: RwLock<Option<Arc<CorpusStats>>>,
}

impl LocalShard {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            lexical: None,
            dense: None,
            embedder: None,
            global: RwLock::new(None),
        }
    }

    pub fn with_lexical(mut self, index: Arc<LexicalIndex>) -> Self {
        self.lexical = Some(index);
        self
    }

    /// Dense search needs an embedder for the query text.
    pub fn with_dense(mut self, index: Arc<FlatVectorIndex>, embedder: Arc<dyn Embedder>) -> Self {
        self.dense = Some(index);
        self.embedder = Some(embedder);
        self
    }

    pub fn lexical(&self) -> Option<&Arc<LexicalIndex>> {
        self.lexical.as_ref()
    }

    pub fn dense(&self) -> Option<&Arc<FlatVectorIndex>> {
        self.dense.as_ref()
    }

    pub fn global_stats(&self) -> Option<Arc<CorpusStats>> {
        self.global.read().expect("stats lock").clone()
    }

    fn attach_stored(&self, hits: &mut [ScoredDoc], with_body: bool) {
        let Some(lex) = &self.lexical else { return };
        for hit in hits {
            if let Ok(doc) = lex.get_stored(&hit.doc_id) {
                hit.url.get_or_insert_with(|| doc.url.clone());
                hit.title.get_or_insert_with(|| doc.title.clone());
                if with_body {
                    hit.body = Some(doc.body.clone());
                }
            }
        }
    }

    async fn search_lexical(&self, q: &ShardQuery) -> Result<Vec<ScoredDoc>, ShardError> {
        let index = self
            .lexical
            .clone()
            .ok_or(ShardError::Unsupported(SearchMode::Lexical))?;
        let global = match q.stats {
            StatsMode::PerShard => None,
            StatsMode::Global => Some(self.global_stats().ok_or(ShardError::GlobalStatsUnavailable)?),
        };
        let (text, k, field) = (q.q.clone(), q.k, q.field);
        tokio::task::spawn_blocking(move || match global {
            None => Ok(index.search(&text, k, field)),
            Some(stats) => index.search_with_stats(&text, k, field, &stats),
        })
        .await
        .map_err(|e| ShardError::Internal(e.to_string()))?
        .map_err(ShardError::from)
    }

    async fn search_dense(&self, q: &ShardQuery) -> Result<Vec<ScoredDoc>, ShardError> {
        let (Some(index), Some(embedder)) = (self.dense.clone(), self.embedder.clone()) else {
            return Err(ShardError::Unsupported(SearchMode::Dense));
        };
        let mut vectors = embedder.embed(std::slice::from_ref(&q.q)).await?;
        let query = vectors.pop().ok_or_else(|| ShardError::Internal("embedder returned nothing".into()))?;
        let k = q.k;
        tokio::task::spawn_blocking(move || index.search(&query, k))
            .await
            .map_err(|e| ShardError::Internal(e.to_string()))?
            .map_err(ShardError::from)
    }
}

#[async_trait]
impl Shard for LocalShard {
    fn name(&self) -> String {
        self.name.clone()
    }

    async fn search(&self, query: &ShardQuery) -> Result<Vec<ScoredDoc>, ShardError> {
        let mut hits = match query.mode {
            SearchMode::Lexical => self.search_lexical(query).await?,
            SearchMode::Dense => self.search_dense(query).await?,
        };
        if query.mode == SearchMode::Dense || query.with_body {
            self.attach_stored(&mut hits, query.with_body);
        }
        Ok(hits)
    }

    async fn fetch_doc(&self, doc_id: &str) -> Result<Option<StoredDoc>, ShardError> {
        let Some(lex) = &self.lexical else {
            return Ok(None);
        };
        Ok(lex.get_stored(doc_id).ok().map(|d| StoredDoc {
            docid: d.id.clone(),
            segment: d.segment,
            url: d.url.clone(),
            title: d.title.clone(),
            body: d.body.clone(),
        }))
    }

    async fn corpus_stats(&self) -> Result<CorpusStats, ShardError> {
        match &self.lexical {
            Some(lex) => Ok(lex.corpus_stats()),
            None => Err(ShardError::Unsupported(SearchMode::Lexical)),
        }
    }

    async fn publish_global_stats(&self, stats: Arc<CorpusStats>) -> Result<(), ShardError> {
        *self.global.write().expect("stats lock") = Some(stats);
        Ok(())
    }
}
