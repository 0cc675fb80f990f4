//! Listwise chain-of-thought reranking and multi-pass fusion.
//!
//! Each pass shows the model the expanded query and the top-K0 candidates
//! as `[i] text` lines and reads back a ranking of the top K1. Passes are
//! sampled independently and fused with [`rrf_fuse`].

mod parse;
mod rrf;

use serde::{Deserialize, Serialize};

pub use parse::{parse_permutation, Permutation};
pub use rrf::{rrf_fuse, rrf_term};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::llm::{CompletionRequest, LlmClient, Message, TAG_RERANK};
use crate::prompts::{render_rerank_system, render_rerank_user, IMAGE_DESCRIPTION_PREFIX};
use crate::types::{Corpus, Query, RankedList, Stage};
use crate::warnings::Warnings;

/// Outcome of one rerank pass. `permutation` is `None` when the call failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassOutcome {
    pub query_id: String,
    pub pass: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Permutation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn rerank_query_text(query: &Query, config: &PipelineConfig) -> String {
    let base = query.retrieval_text();
    match query.caption.as_deref().filter(|c| !c.is_empty()) {
        Some(c) if config.rerank_include_caption && !base.contains(c) => {
            format!("{base}\n{IMAGE_DESCRIPTION_PREFIX}{c}")
        }
        _ => base.to_string(),
    }
}

/// The request for pass `pass` over `candidates`.
pub fn rerank_request(
    config: &PipelineConfig,
    query: &Query,
    candidates: &RankedList,
    corpus: &Corpus,
    pass: u32,
) -> Result<CompletionRequest> {
    let k1 = config.k1.min(candidates.len());
    let docs = candidates
        .doc_ids()
        .map(|id| {
            corpus
                .get(id)
                .map(|d| d.text.as_str())
                .ok_or_else(|| Error::Invalid(format!("candidate `{id}` is not in the corpus")))
        })
        .collect::<Result<Vec<_>>>()?;
    let user = render_rerank_user(&rerank_query_text(query, config), docs, k1, config.rerank_doc_chars);
    Ok(CompletionRequest::new(
        TAG_RERANK,
        vec![
            Message::system(render_rerank_system(config.prompts.rerank_system(), k1)),
            Message::user(user),
        ],
    )
    .sampling(config.gen_temperature, config.gen_top_p, config.rerank_max_tokens)
    .for_query(&query.id)
    .pass(pass))
}

/// Runs every rerank pass for every query as one bounded batch.
///
/// `runs` holds the retrieval candidates, one list per query; each must name a
/// query in `queries`. Queries with no candidates issue no calls. A failed
/// call becomes a [`PassOutcome`] without a permutation plus a warning.
pub async fn rerank_passes(
    client: &LlmClient,
    queries: &[Query],
    runs: &[RankedList],
    corpus: &Corpus,
    config: &PipelineConfig,
    warnings: &Warnings,
) -> Result<Vec<PassOutcome>> {
    let passes = config.effective_passes() as u32;
    let mut requests = Vec::new();
    let mut slots = Vec::new();
    for run in runs {
        let query = queries
            .iter()
            .find(|q| q.id == run.query_id)
            .ok_or_else(|| Error::UnknownQuery(run.query_id.clone()))?;
        if run.is_empty() {
            continue;
        }
        for pass in 0..passes {
            requests.push(rerank_request(config, query, run, corpus, pass)?);
            slots.push((run.query_id.clone(), pass, run.len()));
        }
    }
    let results = client.run_batch(&requests, config.max_concurrency).await;
    Ok(slots
        .into_iter()
        .zip(results)
        .map(|((query_id, pass, k0), result)| match result {
            Ok(r) => PassOutcome {
                permutation: Some(parse_permutation(&r.text, k0, config.k1)),
                query_id,
                pass,
                error: None,
            },
            Err(e) => {
                warnings.push(TAG_RERANK, Some(&query_id), format!("pass {pass} failed: {e}"));
                PassOutcome {
                    query_id,
                    pass,
                    permutation: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect())
}

/// Fuses the surviving passes for one query into its final top-K1 list.
///
/// If every pass failed the retrieval order stands in (identity
/// permutation) and a warning is recorded. The stage is `rerank` for a single
/// pass and `fused` otherwise.
pub fn fuse_passes(
    outcomes: &[PassOutcome],
    candidates: &RankedList,
    config: &PipelineConfig,
    warnings: &Warnings,
) -> Result<RankedList> {
    if candidates.is_empty() {
        return Ok(RankedList::empty(candidates.query_id.clone(), Stage::Rerank));
    }
    let k1 = config.k1.min(candidates.len());
    let mut perms: Vec<Permutation> = outcomes
        .iter()
        .filter(|o| o.query_id == candidates.query_id)
        .filter_map(|o| o.permutation.clone())
        .collect();
    if perms.is_empty() {
        warnings.push(
            TAG_RERANK,
            Some(&candidates.query_id),
            "no rerank pass succeeded, keeping the retrieval order",
        );
        perms.push(Permutation::identity(k1));
    }
    let fused = rrf_fuse(&perms, candidates, config.k_rrf, k1)?;
    Ok(if config.effective_passes() > 1 {
        fused
    } else {
        fused.with_stage(Stage::Rerank)
    })
}

/// Passes and final lists from [`rerank_all`].
#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutput {
    pub passes: Vec<PassOutcome>,
    pub runs: Vec<RankedList>,
}

/// [`rerank_passes`] followed by [`fuse_passes`] for each query, in `runs`
/// order.
pub async fn rerank_all(
    client: &LlmClient,
    queries: &[Query],
    runs: &[RankedList],
    corpus: &Corpus,
    config: &PipelineConfig,
    warnings: &Warnings,
) -> Result<RerankOutput> {
    let passes = rerank_passes(client, queries, runs, corpus, config, warnings).await?;
    let fused = runs
        .iter()
        .map(|run| fuse_passes(&passes, run, config, warnings))
        .collect::<Result<Vec<_>>>()?;
    Ok(RerankOutput { passes, runs: fused })
}
