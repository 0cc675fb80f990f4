use crate::error::{Error, Result};
use crate::ingest::EmbeddingStore;
use crate::types::{Corpus, EmbeddingVector, RankedList};

/// Cosine similarity `a·b / (‖a‖‖b‖)`.
pub fn cosine_score(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Exact cosine index: rows are unit-normalized at build time so a search is
/// one dot product per document.
#[derive(Debug, Clone)]
pub struct DenseIndex {
    ids: Vec<String>,
    rows: Vec<f64>,
    dim: usize,
}

impl DenseIndex {
    /// Builds from `(doc_id, vector)` pairs in insertion order.
    pub fn build(pairs: impl IntoIterator<Item = (String, EmbeddingVector)>) -> Result<Self> {
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        let mut dim = 0;
        let mut seen = std::collections::HashSet::new();
        for (id, v) in pairs {
            if ids.is_empty() {
                dim = v.dim();
            } else if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.dim(),
                });
            }
            let n = v.norm();
            if n == 0.0 {
                return Err(Error::Invalid(format!("document `{id}` has a zero-norm embedding")));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            rows.extend(v.values().iter().map(|x| x / n));
            ids.push(id);
        }
        Ok(DenseIndex { ids, rows, dim })
    }

    /// One row per corpus document, in corpus order.
    pub fn from_store(corpus: &Corpus, store: &EmbeddingStore) -> Result<Self> {
        let mut missing = Vec::new();
        let mut pairs = Vec::with_capacity(corpus.len());
        for d in corpus.iter() {
            match store.get(&d.id) {
                Some(v) => pairs.push((d.id.clone(), v.clone())),
                None => missing.push(d.id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingEmbeddings(missing));
        }
        DenseIndex::build(pairs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine of the query against every row, in row order.
    pub fn scores(&self, query: &EmbeddingVector) -> Result<Vec<f64>> {
        if !self.is_empty() && query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let n = query.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let q: Vec<f64> = query.values().iter().map(|x| x / n).collect();
        Ok(self
            .rows
            .chunks_exact(self.dim.max(1))
            .map(|row| row.iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// The `k0` highest-cosine documents (all of them if the index is smaller).
pub fn dense_search(index: &DenseIndex, query_id: &str, query: &EmbeddingVector, k0: usize) -> Result<RankedList> {
    if k0 < 1 {
        return Err(Error::Invalid("K0 must be >= 1".into()));
    }
    let scores = index.scores(query)?;
    super::top_k(query_id, scores.into_iter().enumerate().collect(), &index.ids, k0)
}
