//! Okapi BM25 over an in-memory inverted index.
//!
//! ```text
//! idf(t)   = ln(1 + (N - n_t + 0.5) / (n_t + 0.5))
//! tf(t, d) = f (k1 + 1) / (f + k1 (1 - b + b |d| / avgdl))
//! ```
//!
//! Each query token contributes once per occurrence in the query.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::tokenize;
use crate::config::Bm25Params;
use crate::error::{Error, Result};
use crate::types::{Corpus, RankedList, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posting {
    /// Row of the document in corpus order.
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    avgdl: f64,
    /// Postings sorted by document row.
    postings: BTreeMap<String, Vec<Posting>>,
}

pub fn bm25_build(corpus: &Corpus, params: Bm25Params) -> Result<Bm25Index> {
    if corpus.is_empty() {
        return Err(Error::Invalid("cannot build a BM25 index over an empty corpus".into()));
    }
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lens = Vec::with_capacity(corpus.len());
    for (row, doc) in corpus.iter().enumerate() {
        let tokens = tokenize(&doc.text);
        doc_lens.push(tokens.len() as u32);
        let mut tf: HashMap<String, u32> = HashMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        for (term, f) in tf {
            postings.entry(term).or_default().push(Posting { doc: row as u32, tf: f });
        }
    }
    for list in postings.values_mut() {
        list.sort_by_key(|p| p.doc);
    }
    let total: u64 = doc_lens.iter().map(|&l| u64::from(l)).sum();
    Ok(Bm25Index {
        params,
        doc_ids: corpus.iter().map(|d| d.id.clone()).collect(),
        avgdl: total as f64 / doc_lens.len() as f64,
        doc_lens,
        postings,
    })
}

impl Bm25Index {
    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_len(&self, row: usize) -> u32 {
        self.doc_lens[row]
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn idf(&self, doc_freq: usize) -> f64 {
        let n = self.num_docs() as f64;
        let df = doc_freq as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Saturated term-frequency factor for a term occurring `tf` times in a
    /// document of `doc_len` tokens.
    pub fn term_factor(&self, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let f = f64::from(tf);
        let norm = if self.avgdl > 0.0 {
            f64::from(doc_len) / self.avgdl
        } else {
            1.0
        };
        f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * norm))
    }

    /// Score of every matching document, keyed by row.
    pub fn score_all(&self, query_text: &str) -> HashMap<usize, f64> {
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for term in tokenize(query_text) {
            let list = self.postings(&term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(list.len());
            for p in list {
                let row = p.doc as usize;
                *acc.entry(row).or_default() += idf * self.term_factor(p.tf, self.doc_lens[row]);
            }
        }
        acc
    }
}

/// Top-`k0` documents by BM25 score. Only documents matching at least one
/// query token are returned; an empty or unmatched query gives an empty list.
pub fn bm25_search(index: &Bm25Index, query_id: &str, query_text: &str, k0: usize) -> Result<RankedList> {
    if k0 < 1 {
        return Err(Error::Invalid("K0 must be >= 1".into()));
    }
    let scored: Vec<(usize, f64)> = index.score_all(query_text).into_iter().collect();
    if scored.is_empty() {
        return Ok(RankedList::empty(query_id, Stage::Retrieval));
    }
    super::top_k(query_id, scored, &index.doc_ids, k0)
}
