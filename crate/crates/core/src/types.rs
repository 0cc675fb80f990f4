//! Domain types shared by every stage.
//!
//! Everything here is immutable once built: stages produce new values
//! (`Query::with_caption`, a fresh [`RankedList`]) instead of mutating shared
//! ones, so the types can be handed across concurrent tasks freely.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A multimodal query: question text plus zero or more image references.
///
/// `caption`, `combined` and `expanded` are filled in by the captioning and
/// expansion stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    #[serde(
        rename = "image_ref",
        default,
        skip_serializing_if = "Vec::is_empty",
        with = "one_or_many"
    )]
    pub image_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combined: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expanded: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Query {
            id: id.into(),
            text: text.into(),
            image_refs: Vec::new(),
            caption: None,
            combined: None,
            expanded: None,
            domain: None,
        }
    }

    pub fn with_image(mut self, image_ref: impl Into<String>) -> Self {
        self.image_refs.push(image_ref.into());
        self
    }

    pub fn with_caption(mut self, caption: impl Into<String>) -> Self {
        self.caption = Some(caption.into()).filter(|c: &String| !c.is_empty());
        self
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain = Some(domain.into());
        self
    }

    pub fn has_image(&self) -> bool {
        !self.image_refs.is_empty()
    }

    /// Text handed to the retriever: the expansion when present, else the
    /// combined input, else the raw question.
    pub fn retrieval_text(&self) -> &str {
        self.expanded
            .as_deref()
            .or(self.combined.as_deref())
            .unwrap_or(&self.text)
    }

    /// Domain tag used for per-domain aggregation.
    pub fn domain_or_default(&self) -> &str {
        self.domain.as_deref().unwrap_or(DEFAULT_DOMAIN)
    }
}

/// Domain label for queries that carry no domain tag.
pub const DEFAULT_DOMAIN: &str = "unassigned";

mod one_or_many {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }

    pub fn serialize<S: Serializer>(v: &[String], s: S) -> Result<S::Ok, S::Error> {
        match v {
            [one] => one.serialize(s),
            many => many.serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
        Ok(match Option::<OneOrMany>::deserialize(d)? {
            None => Vec::new(),
            Some(OneOrMany::One(s)) => vec![s],
            Some(OneOrMany::Many(v)) => v,
        })
    }
}

/// A text-only retrieval unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            domain: None,
        }
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain = Some(domain.into());
        self
    }
}

/// An ordered document collection with unique, non-empty ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            if doc.id.is_empty() {
                return Err(Error::Invalid(format!("document #{} has an empty id", i + 1)));
            }
            if doc.text.is_empty() {
                return Err(Error::Invalid(format!("document `{}` has empty text", doc.id)));
            }
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
        }
        Ok(Corpus { docs, by_id })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter()
    }
}

/// A dense embedding. Values are finite; dimension is the vector length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("embedding vector must have dim >= 1".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("embedding component {i} is not finite")));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        EmbeddingVector::new(self.values.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

/// Which stage produced a [`RankedList`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Retrieval,
    Rerank,
    Fused,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Retrieval => "retrieval",
            Stage::Rerank => "rerank",
            Stage::Fused => "fused",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
}

/// An ordered `(doc_id, score)` list for one query.
///
/// Doc ids are unique and scores never increase along the list. Lists built
/// with [`RankedList::from_scores`] break score ties by ascending doc id;
/// fused lists keep the tie order chosen by the fusion step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RankedListRepr")]
pub struct RankedList {
    pub query_id: String,
    pub stage: Stage,
    entries: Vec<RankedEntry>,
}

#[derive(Deserialize)]
struct RankedListRepr {
    query_id: String,
    stage: Stage,
    entries: Vec<RankedEntry>,
}

impl TryFrom<RankedListRepr> for RankedList {
    type Error = Error;
    fn try_from(r: RankedListRepr) -> Result<Self> {
        RankedList::new(r.query_id, r.stage, r.entries)
    }
}

impl RankedList {
    /// Validates an already ordered list.
    pub fn new(query_id: impl Into<String>, stage: Stage, entries: Vec<RankedEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::Invalid(format!("non-finite score for `{}`", e.doc_id)));
            }
            if !seen.insert(e.doc_id.as_str()) {
                return Err(Error::DuplicateId(e.doc_id.clone()));
            }
        }
        if let Some(w) = entries.windows(2).find(|w| w[0].score < w[1].score) {
            return Err(Error::Invalid(format!(
                "ranked list is not score-descending at `{}`",
                w[1].doc_id
            )));
        }
        Ok(RankedList {
            query_id: query_id.into(),
            stage,
            entries,
        })
    }

    /// Sorts by score descending, ties by ascending doc id.
    pub fn from_scores(
        query_id: impl Into<String>,
        stage: Stage,
        scores: impl IntoIterator<Item = (String, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<RankedEntry> = scores
            .into_iter()
            .map(|(doc_id, score)| RankedEntry { doc_id, score })
            .collect();
        entries.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
        RankedList::new(query_id, stage, entries)
    }

    pub fn empty(query_id: impl Into<String>, stage: Stage) -> Self {
        RankedList {
            query_id: query_id.into(),
            stage,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.entries.iter().any(|e| e.doc_id == doc_id)
    }

    pub fn truncated(mut self, k: usize) -> Self {
        self.entries.truncate(k);
        self
    }

    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }
}

/// Graded relevance judgments. Absent pairs have grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a judgment, returning the grade it replaced.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Option<u32> {
        self.judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn has_query(&self, query_id: &str) -> bool {
        self.judgments.contains_key(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
