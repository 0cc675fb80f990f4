//! Loading corpora, queries, qrels and embeddings; persisted stage caches.
//!
//! Corpus and query files are newline-delimited JSON records. Qrels are
//! whitespace-separated `query_id doc_id grade` triples (the four-column TREC
//! layout `query_id iter doc_id grade` is accepted too).
//!
//! Embeddings are a little-endian binary file: a `u32` row count, a `u32`
//! dimension, then `count * dim` `f32` values in row-major order. Row ids live
//! in a sidecar text file next to it (`<path>.ids`, one id per line, in row
//! order).

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{Corpus, Document, EmbeddingVector, Qrels, Query};
use crate::warnings::Warnings;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Reads non-blank lines as `(1-based line number, line)`.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Reads a newline-delimited JSON file, one record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    lines(path)?
        .into_iter()
        .map(|(n, line)| serde_json::from_str(&line).map_err(|e| Error::parse(path, n, e.to_string())))
        .collect()
}

pub fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: impl IntoIterator<Item = T>) -> Result<()> {
    write_atomic(path, to_jsonl(items)?.as_bytes())
}

/// Hex SHA-256 of a file's contents.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex_digest(&bytes))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in lines(path)? {
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::parse(path, n, e.to_string()))?;
        if doc.id.is_empty() {
            return Err(Error::parse(path, n, "empty document id"));
        }
        if doc.text.is_empty() {
            return Err(Error::parse(path, n, format!("document `{}` has empty text", doc.id)));
        }
        if !seen.insert(doc.id.clone()) {
            return Err(Error::DuplicateId(doc.id));
        }
        docs.push(doc);
    }
    Corpus::new(docs)
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    write_jsonl(path, corpus.docs())
}

#[derive(Deserialize)]
struct QueryRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(flatten)]
    rest: serde_json::Map<String, serde_json::Value>,
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in lines(path)? {
        let rec: QueryRecord = serde_json::from_str(&line).map_err(|e| Error::parse(path, n, e.to_string()))?;
        let id = rec.id.filter(|s| !s.is_empty()).ok_or_else(|| Error::parse(path, n, "missing query id"))?;
        let text = rec
            .text
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::parse(path, n, format!("query `{id}` is missing text")))?;
        let mut full = rec.rest;
        full.insert("id".into(), id.clone().into());
        full.insert("text".into(), text.into());
        let mut query: Query =
            serde_json::from_value(full.into()).map_err(|e| Error::parse(path, n, e.to_string()))?;
        if query.caption.as_deref() == Some("") {
            query.caption = None;
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        out.push(query);
    }
    Ok(out)
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[Query]) -> Result<()> {
    write_jsonl(path, queries)
}

/// Loads qrels. A repeated pair overwrites the earlier grade and records a warning.
pub fn load_qrels(path: impl AsRef<Path>, warnings: &Warnings) -> Result<Qrels> {
    let path = path.as_ref();
    let mut qrels = Qrels::new();
    for (n, line) in lines(path)? {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (q, d, g) = match fields.as_slice() {
            [q, d, g] => (*q, *d, *g),
            [q, _iter, d, g] => (*q, *d, *g),
            _ => {
                return Err(Error::parse(
                    path,
                    n,
                    format!("expected `query_id doc_id grade`, got {} fields", fields.len()),
                ))
            }
        };
        let grade: u32 = g
            .parse()
            .map_err(|_| Error::parse(path, n, format!("grade `{g}` is not a non-negative integer")))?;
        if let Some(prev) = qrels.insert(q, d, grade) {
            warnings.push(
                "ingest",
                Some(q),
                format!("{}:{n}: judgment ({q}, {d}) overwrites earlier grade {prev} with {grade}", path.display()),
            );
        }
    }
    Ok(qrels)
}

pub fn format_qrels(qrels: &Qrels) -> String {
    let mut out = String::new();
    for q in qrels.query_ids() {
        for (d, g) in qrels.for_query(q).into_iter().flatten() {
            out.push_str(&format!("{q} {d} {g}\n"));
        }
    }
    out
}

/// Path of the id sidecar for an embeddings file.
pub fn ids_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".ids");
    PathBuf::from(s)
}

/// Raw rows of an embeddings file, in record order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRows {
    pub dim: usize,
    pub ids: Vec<String>,
    pub vectors: Vec<EmbeddingVector>,
}

pub fn encode_embeddings(dim: usize, vectors: &[EmbeddingVector]) -> Result<Vec<u8>> {
    let count = u32::try_from(vectors.len()).map_err(|_| Error::Invalid("too many embedding rows".into()))?;
    let dim32 = u32::try_from(dim).map_err(|_| Error::Invalid("embedding dimension too large".into()))?;
    let mut buf = Vec::with_capacity(8 + vectors.len() * dim * 4);
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&dim32.to_le_bytes());
    for v in vectors {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        for &x in v.values() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_embeddings(path: &Path, bytes: &[u8]) -> Result<(usize, Vec<EmbeddingVector>)> {
    let bad = |m: String| Error::parse(path, 0, m);
    if bytes.len() < 8 {
        return Err(bad("embeddings header truncated".into()));
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(bad("embedding dimension is zero".into()));
    }
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("embedding header overflows".into()))?;
    let payload = &bytes[8..];
    if payload.len() != expected {
        return Err(bad(format!(
            "payload is {} bytes, header declares {count} x {dim} f32 = {expected}",
            payload.len()
        )));
    }
    let vectors = payload
        .chunks_exact(dim * 4)
        .enumerate()
        .map(|(row, chunk)| {
            let values = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            EmbeddingVector::new(values).map_err(|e| bad(format!("row {row}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dim, vectors))
}

pub fn read_embedding_rows(path: impl AsRef<Path>) -> Result<EmbeddingRows> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dim, vectors) = decode_embeddings(path, &bytes)?;
    let sidecar = ids_sidecar(path);
    let ids: Vec<String> = lines(&sidecar)?.into_iter().map(|(_, l)| l.trim().to_string()).collect();
    if ids.len() != vectors.len() {
        return Err(Error::parse(
            &sidecar,
            0,
            format!("{} ids for {} embedding rows", ids.len(), vectors.len()),
        ));
    }
    Ok(EmbeddingRows { dim, ids, vectors })
}

pub fn write_embedding_rows(path: impl AsRef<Path>, ids: &[String], vectors: &[EmbeddingVector]) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != vectors.len() {
        return Err(Error::Invalid(format!("{} ids for {} vectors", ids.len(), vectors.len())));
    }
    let dim = vectors.first().map_or(1, EmbeddingVector::dim);
    let bytes = encode_embeddings(dim, vectors)?;
    let mut id_text = String::new();
    for id in ids {
        id_text.push_str(id);
        id_text.push('\n');
    }
    write_atomic(ids_sidecar(path), id_text.as_bytes())?;
    write_atomic(path, &bytes)
}

/// Embeddings keyed by id, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: HashMap<String, EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, EmbeddingVector)>) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (id, v) in pairs {
            let d = *dim.get_or_insert(v.dim());
            if v.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: v.dim(),
                });
            }
            if vectors.insert(id.clone(), v).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(EmbeddingStore {
            dim: dim.unwrap_or(0),
            vectors,
        })
    }

    /// Restricts to `corpus`, failing if any corpus document lacks a vector.
    pub fn covering(self, corpus: &Corpus) -> Result<Self> {
        let missing: Vec<String> = corpus
            .iter()
            .filter(|d| !self.vectors.contains_key(&d.id))
            .map(|d| d.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingEmbeddings(missing));
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.vectors.get(id)
    }
}

/// Loads document embeddings and checks that every corpus document has one.
pub fn load_embeddings(path: impl AsRef<Path>, corpus: &Corpus) -> Result<EmbeddingStore> {
    let rows = read_embedding_rows(path)?;
    EmbeddingStore::from_pairs(rows.ids.into_iter().zip(rows.vectors))?.covering(corpus)
}

/// Loads precomputed query vectors (same binary format, keyed by query id).
pub fn load_query_vectors(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let rows = read_embedding_rows(path)?;
    EmbeddingStore::from_pairs(rows.ids.into_iter().zip(rows.vectors))
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    value: String,
}

/// String cache backed by an append-only JSONL file (last record wins on reload).
///
/// Reads take a shared lock; writes are serialized.
#[derive(Debug)]
pub struct TextCache {
    entries: RwLock<HashMap<String, String>>,
    file: Option<Mutex<PathBuf>>,
}

impl TextCache {
    pub fn in_memory() -> Self {
        TextCache {
            entries: RwLock::new(HashMap::new()),
            file: None,
        }
    }

    /// Opens (or creates on first write) a cache persisted at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            for rec in read_jsonl::<CacheRecord>(&path)? {
                entries.insert(rec.key, rec.value);
            }
        }
        Ok(TextCache {
            entries: RwLock::new(entries),
            file: Some(Mutex::new(path)),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().expect("cache poisoned").get(key).cloned()
    }

    pub fn put(&self, key: &str, value: &str) -> Result<()> {
        if let Some(file) = &self.file {
            let path = file.lock().expect("cache poisoned");
            if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let mut line = serde_json::to_string(&CacheRecord {
                key: key.to_string(),
                value: value.to_string(),
            })?;
            line.push('\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&*path)
                .and_then(|mut f| f.write_all(line.as_bytes()))
                .map_err(|e| Error::io(&*path, e))?;
            self.entries
                .write()
                .expect("cache poisoned")
                .insert(key.to_string(), value.to_string());
        } else {
            self.entries
                .write()
                .expect("cache poisoned")
                .insert(key.to_string(), value.to_string());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Captions keyed by query id, generated once per query.
#[derive(Debug)]
pub struct CaptionCache(TextCache);

impl CaptionCache {
    pub fn in_memory() -> Self {
        CaptionCache(TextCache::in_memory())
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        TextCache::open(path).map(CaptionCache)
    }

    pub fn get(&self, query_id: &str) -> Option<String> {
        self.0.get(query_id)
    }

    pub fn put(&self, query_id: &str, caption: &str) -> Result<()> {
        self.0.put(query_id, caption)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Expansions keyed by query id. Each entry also stores a digest of the
/// expansion input and prompt; a lookup with a different digest misses.
#[derive(Debug)]
pub struct ExpansionCache(TextCache);

#[derive(Serialize, Deserialize)]
struct ExpansionEntry {
    input_digest: String,
    expansion: String,
}

impl ExpansionCache {
    pub fn in_memory() -> Self {
        ExpansionCache(TextCache::in_memory())
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        TextCache::open(path).map(ExpansionCache)
    }

    pub fn get(&self, query_id: &str, input_digest: &str) -> Option<String> {
        let raw = self.0.get(query_id)?;
        let entry: ExpansionEntry = serde_json::from_str(&raw).ok()?;
        (entry.input_digest == input_digest).then_some(entry.expansion)
    }

    pub fn put(&self, query_id: &str, input_digest: &str, expansion: &str) -> Result<()> {
        let raw = serde_json::to_string(&ExpansionEntry {
            input_digest: input_digest.to_string(),
            expansion: expansion.to_string(),
        })?;
        self.0.put(query_id, &raw)
    }
}
