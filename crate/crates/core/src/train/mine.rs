use crate::error::Result;
use crate::retrieve::{bm25_search, dense_search, Bm25Index, DenseIndex};
use crate::types::{EmbeddingVector, Qrels, Query, RankedList};
use crate::warnings::Warnings;

const STAGE: &str = "mine";

fn take_unjudged(ranked: &RankedList, query_id: &str, qrels: &Qrels, m: usize, warnings: &Warnings) -> Vec<String> {
    let picked: Vec<String> = ranked
        .doc_ids()
        .filter(|d| qrels.grade(query_id, d) == 0)
        .take(m)
        .map(str::to_string)
        .collect();
    if picked.len() < m {
        warnings.push(
            STAGE,
            Some(query_id),
            format!("only {} of {m} hard negatives available", picked.len()),
        );
    }
    picked
}

/// The `m` best BM25 documents for the query's retrieval text that have
/// grade 0, in rank order.
pub fn mine_hard_negatives(
    index: &Bm25Index,
    query: &Query,
    qrels: &Qrels,
    m: usize,
    warnings: &Warnings,
) -> Result<Vec<String>> {
    if m == 0 {
        return Ok(Vec::new());
    }
    let ranked = bm25_search(index, &query.id, query.retrieval_text(), index.num_docs())?;
    Ok(take_unjudged(&ranked, &query.id, qrels, m, warnings))
}

/// Same rule over a dense index, for mining with an existing retriever.
pub fn mine_hard_negatives_dense(
    index: &DenseIndex,
    query_id: &str,
    query_vector: &EmbeddingVector,
    qrels: &Qrels,
    m: usize,
    warnings: &Warnings,
) -> Result<Vec<String>> {
    if m == 0 {
        return Ok(Vec::new());
    }
    let ranked = dense_search(index, query_id, query_vector, index.len().max(1))?;
    Ok(take_unjudged(&ranked, query_id, qrels, m, warnings))
}

/// [`mine_hard_negatives`] for every query, spread over the available cores.
/// Results are in `queries` order.
pub fn mine_all(
    index: &Bm25Index,
    queries: &[Query],
    qrels: &Qrels,
    m: usize,
    warnings: &Warnings,
) -> Result<Vec<Vec<String>>> {
    let workers = std::thread::available_parallelism().map_or(1, usize::from).min(queries.len().max(1));
    let chunk = queries.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|q| mine_hard_negatives(index, q, qrels, m, warnings))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(queries.len());
        for h in handles {
            out.extend(h.join().expect("mining worker panicked")?);
        }
        Ok(out)
    })
}
