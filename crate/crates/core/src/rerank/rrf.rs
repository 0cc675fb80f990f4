//! Reciprocal rank fusion over rerank passes.

use std::collections::HashMap;

use super::Permutation;
use crate::error::{Error, Result};
use crate::types::{RankedEntry, RankedList, Stage};

/// Contribution of one pass: `1 / (rank + k)` with 1-based `rank`.
pub fn rrf_term(rank: usize, k_rrf: f64) -> f64 {
    1.0 / (rank as f64 + k_rrf)
}

/// Fuses permutations over `candidates` into the top-`k1` list.
///
/// A document's score is the sum of [`rrf_term`] over the passes that ranked
/// it; passes that omit it add nothing. Ties fall back to the retrieval score
/// (descending), then the doc id (ascending).
pub fn rrf_fuse(permutations: &[Permutation], candidates: &RankedList, k_rrf: f64, k1: usize) -> Result<RankedList> {
    if permutations.is_empty() {
        return Err(Error::Invalid("rrf_fuse needs at least one permutation".into()));
    }
    if !(k_rrf > 0.0 && k_rrf.is_finite()) {
        return Err(Error::Invalid("k_rrf must be positive".into()));
    }
    let entries = candidates.entries();
    let mut fused: HashMap<usize, f64> = HashMap::new();
    for p in permutations {
        for (rank0, &idx) in p.indices().iter().enumerate() {
            if idx == 0 || idx > entries.len() {
                return Err(Error::Invalid(format!(
                    "permutation index {idx} outside the {} candidates",
                    entries.len()
                )));
            }
            *fused.entry(idx - 1).or_default() += rrf_term(rank0 + 1, k_rrf);
        }
    }
    let mut scored: Vec<(usize, f64)> = fused.into_iter().collect();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| entries[b.0].score.total_cmp(&entries[a.0].score))
            .then_with(|| entries[a.0].doc_id.cmp(&entries[b.0].doc_id))
    });
    scored.truncate(k1);
    RankedList::new(
        candidates.query_id.clone(),
        Stage::Fused,
        scored
            .into_iter()
            .map(|(i, s)| RankedEntry {
                doc_id: entries[i].doc_id.clone(),
                score: s,
            })
            .collect(),
    )
}
