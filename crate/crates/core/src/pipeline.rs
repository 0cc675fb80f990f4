//! The one-shot pipeline: caption, combine, expand, retrieve, rerank, fuse,
//! evaluate.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

use crate::caption::{caption_all, combine};
use crate::config::{Bm25Params, PipelineConfig, RetrieverKind};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, EvaluationReport, NDCG_DEPTH};
use crate::expand::expand_all;
use crate::ingest::{CaptionCache, EmbeddingStore, ExpansionCache};
use crate::llm::LlmClient;
use crate::rerank::{rerank_all, PassOutcome};
use crate::retrieve::{bm25_build, bm25_search, dense_search, Bm25Index, DenseIndex, HashingEmbedder, QueryEmbedder};
use crate::types::{Corpus, Qrels, Query, RankedList, Stage};
use crate::warnings::{Warning, Warnings};

const RETRIEVE: &str = "retrieve";

/// Shared state across runs: the backend client, the corpus, stage caches
/// and lazily built indexes. Sweeps reuse one engine so captions and
/// expansions are computed once.
pub struct Engine {
    client: LlmClient,
    corpus: Arc<Corpus>,
    captions: CaptionCache,
    expansions: ExpansionCache,
    dense: Option<(Arc<DenseIndex>, QueryEmbedder)>,
    bm25: Mutex<Option<(Bm25Params, Arc<Bm25Index>)>>,
}

impl Engine {
    /// In-memory caches and no dense retriever.
    pub fn new(client: LlmClient, corpus: Corpus) -> Self {
        Engine {
            client,
            corpus: Arc::new(corpus),
            captions: CaptionCache::in_memory(),
            expansions: ExpansionCache::in_memory(),
            dense: None,
            bm25: Mutex::new(None),
        }
    }

    pub fn with_caches(mut self, captions: CaptionCache, expansions: ExpansionCache) -> Self {
        self.captions = captions;
        self.expansions = expansions;
        self
    }

    pub fn with_dense(mut self, index: DenseIndex, queries: QueryEmbedder) -> Self {
        self.dense = Some((Arc::new(index), queries));
        self
    }

    /// Dense retrieval from stored document vectors.
    pub fn with_document_vectors(self, store: &EmbeddingStore, queries: QueryEmbedder) -> Result<Self> {
        let index = DenseIndex::from_store(&self.corpus, store)?;
        Ok(self.with_dense(index, queries))
    }

    /// Dense retrieval with [`HashingEmbedder`] on both sides.
    pub fn with_hashing_embedder(self, dim: usize) -> Result<Self> {
        let h = HashingEmbedder::new(dim)?;
        let index = DenseIndex::build(h.embed_corpus(&self.corpus))?;
        Ok(self.with_dense(index, QueryEmbedder::Hashing(h)))
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn bm25_index(&self, params: Bm25Params) -> Result<Arc<Bm25Index>> {
        let mut slot = self.bm25.lock().expect("bm25 slot poisoned");
        if let Some((p, idx)) = slot.as_ref() {
            if *p == params {
                return Ok(idx.clone());
            }
        }
        let idx = Arc::new(bm25_build(&self.corpus, params)?);
        *slot = Some((params, idx.clone()));
        Ok(idx)
    }

    /// Captions each query when captioning is on; otherwise any
    /// pre-supplied caption is dropped.
    pub async fn caption(&self, queries: &[Query], config: &PipelineConfig, warnings: &Warnings) -> Result<Vec<Query>> {
        if config.caption_on {
            return caption_all(&self.client, queries, &self.captions, config, warnings).await;
        }
        Ok(queries
            .iter()
            .map(|q| Query {
                caption: None,
                ..q.clone()
            })
            .collect())
    }

    /// Combines question and caption, then expands.
    pub async fn expand(&self, queries: &[Query], config: &PipelineConfig, warnings: &Warnings) -> Result<Vec<Query>> {
        let combined: Vec<Query> = queries.iter().map(combine).collect();
        expand_all(&self.client, &combined, Some(&self.expansions), config, warnings).await
    }

    /// [`Engine::caption`] then [`Engine::expand`].
    pub async fn prepare_queries(&self, queries: &[Query], config: &PipelineConfig, warnings: &Warnings) -> Result<Vec<Query>> {
        let captioned = self.caption(queries, config, warnings).await?;
        self.expand(&captioned, config, warnings).await
    }

    /// Top-K0 candidates for each query's retrieval text, in query order.
    pub async fn retrieve(&self, queries: &[Query], config: &PipelineConfig, warnings: &Warnings) -> Result<Vec<RankedList>> {
        match config.retriever {
            RetrieverKind::Bm25 => {
                let idx = self.bm25_index(config.bm25)?;
                queries
                    .iter()
                    .map(|q| bm25_search(&idx, &q.id, q.retrieval_text(), config.k0))
                    .collect()
            }
            RetrieverKind::Dense => {
                let (index, embedder) = self
                    .dense
                    .as_ref()
                    .ok_or_else(|| Error::Config("dense retrieval needs document embeddings".into()))?;
                stream::iter(queries.iter().map(|q| async move {
                    let v = embedder
                        .embed_query(&q.id, q.retrieval_text(), index.dim())
                        .await
                        .map_err(|e| e.for_query(&q.id))?;
                    match dense_search(index, &q.id, &v, config.k0) {
                        Err(Error::ZeroNorm) => {
                            warnings.push(RETRIEVE, Some(&q.id), "query embedding has zero norm, no candidates");
                            Ok(RankedList::empty(q.id.clone(), Stage::Retrieval))
                        }
                        other => other,
                    }
                }))
                .buffered(config.max_concurrency.max(1))
                .try_collect()
                .await
            }
        }
    }

    /// Runs every enabled stage and scores the result against `qrels`.
    pub async fn run(&self, queries: &[Query], qrels: &Qrels, config: &PipelineConfig) -> Result<PipelineRun> {
        config.validate()?;
        let warnings = Warnings::new();
        let calls_before = self.client.calls_by_tag();
        let prepared = self.prepare_queries(queries, config, &warnings).await?;
        let candidates = self.retrieve(&prepared, config, &warnings).await?;
        let (passes, runs) = if config.rerank_on {
            let out = rerank_all(&self.client, &prepared, &candidates, &self.corpus, config, &warnings).await?;
            (out.passes, out.runs)
        } else {
            (Vec::new(), candidates.clone())
        };
        let report = evaluate_run(&runs, qrels, &prepared, NDCG_DEPTH, &warnings)?;
        let mut calls = self.client.calls_by_tag();
        for (tag, n) in &mut calls {
            *n -= calls_before.get(tag).copied().unwrap_or(0);
        }
        calls.retain(|_, n| *n > 0);
        Ok(PipelineRun {
            queries: prepared,
            candidates,
            passes,
            runs,
            report,
            calls,
            warnings: warnings.snapshot(),
        })
    }
}

/// Everything one pipeline run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    /// Queries with captions, combined inputs and expansions filled in.
    pub queries: Vec<Query>,
    /// Top-K0 retrieval lists, in query order.
    pub candidates: Vec<RankedList>,
    pub passes: Vec<PassOutcome>,
    /// Final lists: reranked top-K1, or the retrieval lists with reranking off.
    pub runs: Vec<RankedList>,
    pub report: EvaluationReport,
    /// Backend requests issued by this run, per stage tag.
    pub calls: BTreeMap<String, u64>,
    pub warnings: Vec<Warning>,
}

/// Reproducibility record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: PipelineConfig,
    /// Input path label to sha256 digest.
    pub inputs: BTreeMap<String, String>,
    pub calls: BTreeMap<String, u64>,
    pub warnings: Vec<Warning>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockBackend, TAG_CAPTION, TAG_EXPAND, TAG_RERANK};
    use crate::types::Document;

    fn corpus() -> Corpus {
        Corpus::new(vec![
            Document::new("d1", "ice floats because it is less dense than water"),
            Document::new("d2", "copper conducts electricity"),
            Document::new("d3", "volcanoes erupt molten rock"),
        ])
        .unwrap()
    }

    fn qrels() -> Qrels {
        let mut q = Qrels::new();
        q.insert("q1", "d1", 1);
        q
    }

    fn engine(mock: MockBackend) -> Engine {
        Engine::new(LlmClient::new(Arc::new(mock), 4), corpus())
            .with_hashing_embedder(64)
            .unwrap()
    }

    fn config() -> PipelineConfig {
        PipelineConfig {
            k0: 3,
            k1: 2,
            passes: 2,
            ..PipelineConfig::default()
        }
    }

    #[tokio::test]
    async fn full_run_counts_calls_per_stage() {
        let mock = MockBackend::new()
            .with_fixture(TAG_CAPTION, "q1", None, "a glass of water with ice")
            .with_fixture(TAG_EXPAND, "q1", None, "ice density water floats")
            .with_fixture(TAG_RERANK, "q1", None, "[1] > [2]");
        let e = engine(mock);
        let q = [Query::new("q1", "why does this float?").with_image("img.png")];
        let run = e.run(&q, &qrels(), &config()).await.unwrap();
        assert_eq!(run.calls[TAG_CAPTION], 1);
        assert_eq!(run.calls[TAG_EXPAND], 1);
        assert_eq!(run.calls[TAG_RERANK], 2);
        assert_eq!(run.runs[0].len(), 2);
        assert_eq!(run.candidates[0].len(), 3);
        assert_eq!(run.report.macro_ndcg, 1.0);

        // second run hits both caches
        let again = e.run(&q, &qrels(), &config()).await.unwrap();
        assert!(!again.calls.contains_key(TAG_CAPTION));
        assert!(!again.calls.contains_key(TAG_EXPAND));
        assert_eq!(again.report, run.report);
    }

    #[tokio::test]
    async fn retrieval_only_makes_no_calls() {
        let e = engine(MockBackend::new());
        let cfg = config().retrieval_only();
        let q = [Query::new("q1", "ice water").with_caption("ignored caption")];
        let run = e.run(&q, &qrels(), &cfg).await.unwrap();
        assert!(run.calls.is_empty());
        assert_eq!(run.runs, run.candidates);
        assert_eq!(run.queries[0].retrieval_text(), "ice water");
    }

    #[tokio::test]
    async fn bm25_retriever_and_empty_candidates() {
        let e = engine(MockBackend::new());
        let cfg = PipelineConfig {
            retriever: RetrieverKind::Bm25,
            ..config().retrieval_only()
        };
        let q = [Query::new("q1", "ice"), Query::new("q2", "plasma")];
        let run = e.run(&q, &qrels(), &cfg).await.unwrap();
        assert_eq!(run.runs[0].entries()[0].doc_id, "d1");
        assert!(run.runs[1].is_empty());
        // q2 has no judgments
        assert_eq!(run.warnings.len(), 1);
    }

    #[tokio::test]
    async fn dense_without_embeddings_is_config_error() {
        let e = Engine::new(LlmClient::new(Arc::new(MockBackend::new()), 1), corpus());
        let r = e.run(&[Query::new("q1", "x")], &qrels(), &config().retrieval_only()).await;
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[tokio::test]
    async fn zero_norm_query_gets_empty_candidates() {
        let e = engine(MockBackend::new());
        let run = e.run(&[Query::new("q1", "?!")], &qrels(), &config().retrieval_only()).await.unwrap();
        assert!(run.runs[0].is_empty());
        assert!(run.warnings.iter().any(|w| w.stage == "retrieve"));
    }

    #[tokio::test]
    async fn invalid_config_rejected_before_any_call() {
        let e = engine(MockBackend::new());
        let cfg = PipelineConfig { k1: 0, ..config() };
        assert!(matches!(e.run(&[], &qrels(), &cfg).await, Err(Error::Config(_))));
        assert!(e.client().calls_by_tag().is_empty());
    }
}
