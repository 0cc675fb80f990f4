//! Query embedding backends.
//!
//! The query encoder itself lives outside the engine. Vectors come from a
//! precomputed table keyed by query id, from a remote `/embeddings` endpoint,
//! or from [`HashingEmbedder`], a deterministic bag-of-words projection used
//! for offline fixtures and smoke tests.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::tokenize;
use crate::error::{Error, Result};
use crate::ingest::EmbeddingStore;
use crate::types::{Corpus, EmbeddingVector};

/// Signed feature hashing of lowercase tokens into `dim` buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("hashing embedder needs dim >= 1".into()));
        }
        Ok(HashingEmbedder { dim })
    }

    /// May return the zero vector when `text` has no tokens.
    pub fn embed(&self, text: &str) -> EmbeddingVector {
        let mut v = vec![0.0; self.dim];
        for t in tokenize(text) {
            let h = fnv1a(t.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        EmbeddingVector::new(v).expect("finite by construction")
    }

    pub fn embed_corpus(&self, corpus: &Corpus) -> Vec<(String, EmbeddingVector)> {
        corpus.iter().map(|d| (d.id.clone(), self.embed(&d.text))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteEmbedderConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for RemoteEmbedderConfig {
    fn default() -> Self {
        RemoteEmbedderConfig {
            base_url: "http://127.0.0.1:8080/v1".into(),
            model: "retriever".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
        }
    }
}

/// Client for an OpenAI-compatible `/embeddings` endpoint: one text in, one
/// vector out.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    http: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl RemoteEmbedder {
    pub fn from_config(config: &RemoteEmbedderConfig) -> Result<Self> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(RemoteEmbedder {
            http,
            endpoint: format!("{}/embeddings", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
        })
    }

    pub async fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut call = self
            .http
            .post(&self.endpoint)
            .json(&json!({"model": self.model, "input": text}));
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().await.map_err(|e| Error::BackendUnavailable {
            attempts: 1,
            cause: e.to_string(),
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::BackendUnavailable {
                attempts: 1,
                cause: format!("embedding endpoint returned HTTP {status}"),
            });
        }
        let body: Value = resp.json().await.map_err(|e| Error::Protocol(e.to_string()))?;
        let values = body
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Protocol("embedding response has no data[0].embedding".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| Error::Protocol("non-numeric embedding component".into())))
            .collect::<Result<Vec<f64>>>()?;
        EmbeddingVector::new(values)
    }
}

/// Where query vectors come from.
#[derive(Debug, Clone)]
pub enum QueryEmbedder {
    Lookup(EmbeddingStore),
    Remote(RemoteEmbedder),
    Hashing(HashingEmbedder),
}

impl QueryEmbedder {
    /// Embeds a query and checks the result against the index dimension.
    pub async fn embed_query(&self, query_id: &str, text: &str, index_dim: usize) -> Result<EmbeddingVector> {
        let v = match self {
            QueryEmbedder::Lookup(store) => store
                .get(query_id)
                .cloned()
                .ok_or_else(|| Error::UnknownQuery(query_id.to_string()))?,
            QueryEmbedder::Remote(r) => r.embed(text).await?,
            QueryEmbedder::Hashing(h) => h.embed(text),
        };
        if v.dim() != index_dim {
            return Err(Error::DimensionMismatch {
                expected: index_dim,
                found: v.dim(),
            });
        }
        Ok(v)
    }
}
