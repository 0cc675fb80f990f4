//! Expand-retrieve-rerank retrieval for queries that mix text and images.
//!
//! A query's image is captioned, the caption is joined to the question, the
//! result is expanded by an LLM, a first-stage retriever returns the top-K0
//! documents for the expansion, and an LLM reranks those candidates in
//! several sampled passes fused by reciprocal rank fusion.

pub mod caption;
pub mod config;
pub mod error;
pub mod eval;
pub mod expand;
pub mod ingest;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod rerank;
pub mod retrieve;
pub mod train;
pub mod types;
pub mod warnings;

pub use config::{PipelineConfig, RetrieverKind};
pub use error::{Error, Result};
pub use eval::{evaluate_run, ndcg_at_k, EvaluationReport};
pub use pipeline::{Engine, PipelineRun, RunManifest};
pub use rerank::{parse_permutation, rrf_fuse, Permutation};
pub use types::{Corpus, Document, EmbeddingVector, Qrels, Query, RankedEntry, RankedList, Stage};
pub use warnings::{Warning, Warnings};
