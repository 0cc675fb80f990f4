//! Pipeline configuration.
//!
//! Defaults are the operating point the engine was designed around: 100
//! candidates into the reranker, 10 out, five fused passes at `k = 60`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    #[default]
    Dense,
    Bm25,
}

impl std::fmt::Display for RetrieverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RetrieverKind::Dense => "dense",
            RetrieverKind::Bm25 => "bm25",
        })
    }
}

impl std::str::FromStr for RetrieverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(RetrieverKind::Dense),
            "bm25" => Ok(RetrieverKind::Bm25),
            other => Err(Error::Config(format!("unknown retriever `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LlmBackendKind {
    Wire,
    #[default]
    Mock,
}

impl std::str::FromStr for LlmBackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wire" => Ok(LlmBackendKind::Wire),
            "mock" => Ok(LlmBackendKind::Mock),
            other => Err(Error::Config(format!("unknown llm backend `{other}`"))),
        }
    }
}

/// Okapi BM25 parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

/// Prompt templates. `None` selects the built-in template.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caption_system: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expand_system: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rerank_system: Option<String>,
}

impl PromptOverrides {
    pub fn caption_system(&self) -> &str {
        self.caption_system.as_deref().unwrap_or(prompts::CAPTION_SYSTEM)
    }

    pub fn expand_system(&self) -> &str {
        self.expand_system.as_deref().unwrap_or(prompts::EXPAND_SYSTEM)
    }

    pub fn rerank_system(&self) -> &str {
        self.rerank_system.as_deref().unwrap_or(prompts::RERANK_SYSTEM)
    }
}

/// Pipeline stages that can be toggled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageToggle {
    Caption,
    Expand,
    Rerank,
    DoubleRerank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Retrieval depth handed to the reranker.
    pub k0: usize,
    /// Final ranked depth.
    pub k1: usize,
    /// Independent rerank passes fused by RRF.
    pub passes: usize,
    pub k_rrf: f64,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Hard negatives per training query.
    pub hard_negatives: usize,
    pub caption_temperature: f64,
    pub gen_temperature: f64,
    pub gen_top_p: f64,
    pub max_expansion_tokens: u32,
    pub caption_max_tokens: u32,
    pub rerank_max_tokens: u32,
    pub max_concurrency: usize,
    pub caption_on: bool,
    pub expand_on: bool,
    pub rerank_on: bool,
    pub double_rerank_on: bool,
    pub retriever: RetrieverKind,
    pub backend: LlmBackendKind,
    /// Per-document character budget inside the rerank prompt.
    pub rerank_doc_chars: usize,
    /// Append the image caption to the expanded query in the rerank prompt.
    pub rerank_include_caption: bool,
    pub bm25: Bm25Params,
    pub prompts: PromptOverrides,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k0: 100,
            k1: 10,
            passes: 5,
            k_rrf: 60.0,
            tau: 0.02,
            hard_negatives: 7,
            caption_temperature: 0.0,
            gen_temperature: 0.8,
            gen_top_p: 0.8,
            max_expansion_tokens: 2048,
            caption_max_tokens: 1024,
            rerank_max_tokens: 4096,
            max_concurrency: 20,
            caption_on: true,
            expand_on: true,
            rerank_on: true,
            double_rerank_on: true,
            retriever: RetrieverKind::Dense,
            backend: LlmBackendKind::Mock,
            rerank_doc_chars: 1000,
            rerank_include_caption: false,
            bm25: Bm25Params::default(),
            prompts: PromptOverrides::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.k0 < 1 {
            return fail("k0 must be >= 1");
        }
        if self.k1 < 1 || self.k1 > self.k0 {
            return fail("k1 must satisfy 1 <= k1 <= k0");
        }
        if self.passes < 1 {
            return fail("passes must be >= 1");
        }
        if !(self.k_rrf > 0.0 && self.k_rrf.is_finite()) {
            return fail("k_rrf must be a positive number");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail("tau must be a positive number");
        }
        if self.max_concurrency < 1 {
            return fail("max_concurrency must be >= 1");
        }
        if !(self.caption_temperature >= 0.0 && self.gen_temperature >= 0.0) {
            return fail("temperatures must be >= 0");
        }
        if !(self.gen_top_p > 0.0 && self.gen_top_p <= 1.0) {
            return fail("gen_top_p must lie in (0, 1]");
        }
        if self.max_expansion_tokens == 0 || self.caption_max_tokens == 0 || self.rerank_max_tokens == 0 {
            return fail("token limits must be positive");
        }
        if self.bm25.k1 < 0.0 || !(0.0..=1.0).contains(&self.bm25.b) {
            return fail("bm25 requires k1 >= 0 and 0 <= b <= 1");
        }
        Ok(())
    }

    /// Number of rerank passes actually executed.
    pub fn effective_passes(&self) -> usize {
        if self.double_rerank_on {
            self.passes
        } else {
            1
        }
    }

    /// Stages this configuration runs. Double reranking implies reranking.
    pub fn enabled_stages(&self) -> BTreeSet<StageToggle> {
        let mut s = BTreeSet::new();
        if self.caption_on {
            s.insert(StageToggle::Caption);
        }
        if self.expand_on {
            s.insert(StageToggle::Expand);
        }
        if self.rerank_on {
            s.insert(StageToggle::Rerank);
            if self.double_rerank_on && self.passes > 1 {
                s.insert(StageToggle::DoubleRerank);
            }
        }
        s
    }

    pub fn retrieval_only(mut self) -> Self {
        self.caption_on = false;
        self.expand_on = false;
        self.rerank_on = false;
        self.double_rerank_on = false;
        self
    }
}
