//! The configuration file and its command-line overrides.
//!
//! Precedence is flag > file > default. Relative paths in the file resolve
//! against the file's directory; paths given as flags resolve against the
//! working directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use expandrank::config::LlmBackendKind;
use expandrank::ingest::{file_digest, load_corpus, load_embeddings, load_qrels, load_query_vectors, load_queries, CaptionCache, ExpansionCache};
use expandrank::llm::{CompletionBackend, LlmClient, MissPolicy, MockBackend, WireBackend, WireConfig};
use expandrank::retrieve::{QueryEmbedder, RemoteEmbedder, RemoteEmbedderConfig};
use expandrank::{Corpus, Engine, Error, PipelineConfig, Qrels, Query, Result, RetrieverKind, Warnings};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub pipeline: PipelineConfig,
    pub llm: LlmSection,
    pub embedding: EmbeddingSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    /// Fixture files replayed by the mock backend.
    pub fixtures: Vec<PathBuf>,
    /// What the mock does for a request without a fixture.
    pub on_miss: OnMiss,
    pub wire: WireConfig,
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection {
            fixtures: Vec::new(),
            on_miss: OnMiss::Fail,
            wire: WireConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnMiss {
    Echo,
    Fail,
}

/// Document vectors come from `documents` when set, with query vectors from
/// `queries` or else the `remote` encoder. Without `documents`, the hashing
/// embedder of width `dim` encodes both sides.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub dim: usize,
    pub documents: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub remote: Option<RemoteEmbedderConfig>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            dim: 256,
            documents: None,
            queries: None,
            remote: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    /// Persistent caption and expansion caches live here when set.
    pub cache_dir: Option<PathBuf>,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Query file; stages after `caption` take the previous stage's output here.
    #[arg(long, global = true)]
    pub queries: Option<PathBuf>,
    #[arg(long, global = true)]
    pub qrels: Option<PathBuf>,
    /// Mock fixture file; repeat to load several. Replaces the file's list.
    #[arg(long = "fixtures", global = true)]
    pub fixtures: Vec<PathBuf>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub k0: Option<usize>,
    #[arg(long, global = true)]
    pub k1: Option<usize>,
    #[arg(long, global = true)]
    pub passes: Option<usize>,
    #[arg(long = "k-rrf", global = true)]
    pub k_rrf: Option<f64>,
    #[arg(long, global = true)]
    pub retriever: Option<RetrieverKind>,
    #[arg(long, global = true)]
    pub backend: Option<LlmBackendKind>,
    #[arg(long, global = true)]
    pub no_caption: bool,
    #[arg(long, global = true)]
    pub no_expand: bool,
    #[arg(long, global = true)]
    pub no_rerank: bool,
}

/// File and flags merged, with paths resolved.
#[derive(Debug, Clone)]
pub struct Settings {
    pub config_file: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub llm: LlmSection,
    pub embedding: EmbeddingSection,
    pub paths: PathsSection,
}

impl Settings {
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut file = match &o.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let mut f: FileConfig =
                    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
                let base = path.parent().unwrap_or(Path::new(""));
                f.rebase(base);
                f
            }
            None => FileConfig::default(),
        };
        let p = &mut file.pipeline;
        set(&mut p.k0, o.k0);
        set(&mut p.k1, o.k1);
        set(&mut p.passes, o.passes);
        set(&mut p.k_rrf, o.k_rrf);
        set(&mut p.retriever, o.retriever);
        set(&mut p.backend, o.backend);
        if o.no_caption {
            p.caption_on = false;
        }
        if o.no_expand {
            p.expand_on = false;
        }
        if o.no_rerank {
            p.rerank_on = false;
        }
        p.validate()?;
        let paths = &mut file.paths;
        set_path(&mut paths.corpus, &o.corpus);
        set_path(&mut paths.queries, &o.queries);
        set_path(&mut paths.qrels, &o.qrels);
        set_path(&mut paths.cache_dir, &o.cache_dir);
        if !o.fixtures.is_empty() {
            file.llm.fixtures = o.fixtures.clone();
        }
        Ok(Settings {
            config_file: o.config.clone(),
            pipeline: file.pipeline,
            llm: file.llm,
            embedding: file.embedding,
            paths: file.paths,
        })
    }

    fn required<'a>(&self, p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
        p.as_ref()
            .ok_or_else(|| Error::Config(format!("no {what} path: set paths.{what} or pass --{what}")))
    }

    pub fn corpus(&self, inputs: &mut Inputs) -> Result<Corpus> {
        let path = self.required(&self.paths.corpus, "corpus")?;
        let corpus = load_corpus(path)?;
        inputs.add("corpus", path)?;
        Ok(corpus)
    }

    pub fn queries(&self, inputs: &mut Inputs) -> Result<Vec<Query>> {
        let path = self.required(&self.paths.queries, "queries")?;
        let queries = load_queries(path)?;
        inputs.add("queries", path)?;
        Ok(queries)
    }

    pub fn qrels(&self, inputs: &mut Inputs, warnings: &Warnings) -> Result<Qrels> {
        let path = self.required(&self.paths.qrels, "qrels")?;
        let qrels = load_qrels(path, warnings)?;
        inputs.add("qrels", path)?;
        Ok(qrels)
    }

    pub fn client(&self, inputs: &mut Inputs) -> Result<LlmClient> {
        let backend: Arc<dyn CompletionBackend> = match self.pipeline.backend {
            LlmBackendKind::Mock => {
                for (i, f) in self.llm.fixtures.iter().enumerate() {
                    inputs.add(&format!("fixtures.{i}"), f)?;
                }
                let policy = match self.llm.on_miss {
                    OnMiss::Echo => MissPolicy::Echo,
                    OnMiss::Fail => MissPolicy::Fail,
                };
                Arc::new(MockBackend::from_files(&self.llm.fixtures)?.on_miss(policy))
            }
            LlmBackendKind::Wire => Arc::new(WireBackend::from_config(&self.llm.wire)?),
        };
        Ok(LlmClient::new(backend, self.pipeline.max_concurrency))
    }

    /// Engine over `corpus` with caches and the dense retriever configured.
    /// Dense setup is skipped when `dense` is false.
    pub fn engine(&self, corpus: Corpus, inputs: &mut Inputs, dense: bool) -> Result<Engine> {
        let mut engine = Engine::new(self.client(inputs)?, corpus);
        if let Some(dir) = &self.paths.cache_dir {
            engine = engine.with_caches(
                CaptionCache::open(dir.join("captions.jsonl"))?,
                ExpansionCache::open(dir.join("expansions.jsonl"))?,
            );
        }
        if !dense {
            return Ok(engine);
        }
        let e = &self.embedding;
        match &e.documents {
            None => engine.with_hashing_embedder(e.dim),
            Some(docs) => {
                let store = load_embeddings(docs, engine.corpus())?;
                inputs.add("embedding.documents", docs)?;
                let queries = match (&e.queries, &e.remote) {
                    (Some(q), _) => {
                        inputs.add("embedding.queries", q)?;
                        QueryEmbedder::Lookup(load_query_vectors(q)?)
                    }
                    (None, Some(remote)) => QueryEmbedder::Remote(RemoteEmbedder::from_config(remote)?),
                    (None, None) => {
                        return Err(Error::Config(
                            "embedding.documents needs embedding.queries or embedding.remote for the query side".into(),
                        ))
                    }
                };
                engine.with_document_vectors(&store, queries)
            }
        }
    }

    pub fn needs_dense(&self) -> bool {
        self.pipeline.retriever == RetrieverKind::Dense
    }
}

impl FileConfig {
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.paths.corpus,
            &mut self.paths.queries,
            &mut self.paths.qrels,
            &mut self.paths.cache_dir,
            &mut self.embedding.documents,
            &mut self.embedding.queries,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.llm.fixtures.iter_mut().for_each(fix);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: &Option<PathBuf>) {
    if value.is_some() {
        slot.clone_from(value);
    }
}

/// Input label to sha256 digest, for the manifest. Labels name the role of
/// a file, not its path, so runs from different directories compare equal.
#[derive(Debug, Default)]
pub struct Inputs(pub BTreeMap<String, String>);

impl Inputs {
    pub fn add(&mut self, label: &str, path: &Path) -> Result<()> {
        self.0.insert(label.to_string(), file_digest(path)?);
        Ok(())
    }
}
