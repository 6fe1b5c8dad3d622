//! Sharded hybrid retrieval: BM25 shards and flat dense indexes served behind
//! a federating aggregator, a pluggable reranking stage, training-data
//! generation and IR evaluation.

mod codec;
pub mod denseindex;
pub mod docmodel;
pub mod embed;
pub mod evalkit;
pub mod federation;
pub mod lexindex;
pub mod ranking;
pub mod remote;
pub mod rerank;
pub mod traingen;

pub use codec::DecodeError;
pub use denseindex::{EmbeddingSpec, FlatVectorIndex};
pub use docmodel::{Document, PartitionPlan};
pub use lexindex::{Bm25Params, Field, LexicalIndex};
pub use ranking::{RankedList, ScoredDoc};
