//! First-stage retrieval: exact cosine top-K over document embeddings, and
//! Okapi BM25 as a lexical swap-in.

mod bm25;
mod dense;
mod embed;

pub use bm25::{bm25_build, bm25_search, Bm25Index};
pub use dense::{cosine_score, dense_search, DenseIndex};
pub use embed::{HashingEmbedder, QueryEmbedder, RemoteEmbedder, RemoteEmbedderConfig};

use crate::error::{Error, Result};
use crate::types::{RankedList, Stage};

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Keeps the `k` best `(row, score)` pairs: score descending, ties by
/// ascending id.
pub(crate) fn top_k(query_id: &str, mut scored: Vec<(usize, f64)>, ids: &[String], k: usize) -> Result<RankedList> {
    if k < 1 {
        return Err(Error::Invalid("K0 must be >= 1".into()));
    }
    let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0]));
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    RankedList::new(
        query_id,
        Stage::Retrieval,
        scored
            .into_iter()
            .map(|(i, s)| crate::types::RankedEntry {
                doc_id: ids[i].clone(),
                score: s,
            })
            .collect(),
    )
}
