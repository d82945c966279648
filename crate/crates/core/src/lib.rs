//! Demonstration selection for in-context LLM passage ranking.
//!
//! The crate covers the whole chain: demonstration pool construction,
//! LLM scoring of demonstration lists, a BM25 candidate miner, a trainable
//! bi-encoder demonstration retriever, a dependency-aware cross-encoder
//! reranker, and the inference/evaluation pipeline (greedy k-shot selection,
//! pointwise relevance ranking, NDCG@10 and TREC run files).
//!
//! Data-parallel loops (candidate scoring, sample construction, per-query
//! evaluation) go through [`parallel`], which uses rayon when the `parallel`
//! feature is enabled and falls back to plain iteration otherwise.

pub mod artifacts;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod dreranker;
pub mod dretriever;
pub mod error;
pub mod parallel;
pub mod pipeline;
pub mod scorer;
pub mod sparse;
pub mod store;
pub mod text;

mod seed;

pub use error::{Error, Result};
pub use seed::derive_seed;
