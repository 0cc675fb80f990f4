use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use expandrank::eval::{ablation_ladder, k0_sweep, plug_and_play, render_plug_and_play, render_sweep, sweep};
use expandrank::ingest::{read_jsonl, to_jsonl, write_atomic, write_embedding_rows};
use expandrank::rerank::{fuse_passes, rerank_passes, PassOutcome};
use expandrank::retrieve::{bm25_build, HashingEmbedder, RemoteEmbedder};
use expandrank::train::{synthetic_instances, train_toy, write_loss_trace, ToyEncoder, TrainConfig};
use expandrank::{
    evaluate_run, EmbeddingVector, Error, Query, RankedList, Result, RetrieverKind, RunManifest, Warning, Warnings,
};
use futures::stream::{self, StreamExt, TryStreamExt};
use serde::Serialize;

use crate::settings::{Inputs, Overrides, Settings};
use crate::Command;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Grid {
    /// Retriever alone, then caption, expansion, one rerank pass, fused passes.
    Ladder,
    /// The configured pipeline at each of `--depths`.
    K0,
    /// BM25 and dense, each alone and under the full pipeline.
    Retrievers,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    /// Loss trace, one record per step.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub instances: usize,
    /// Feature width; also the number of synthetic topics.
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub negatives: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().steps)]
    pub steps: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().tau)]
    pub tau: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
}

/// Everything a command writes, held until the stage has succeeded.
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
    manifest: PathBuf,
}

impl Outputs {
    fn beside(out: &Path) -> Self {
        let mut m = out.as_os_str().to_owned();
        m.push(".manifest.json");
        Outputs {
            files: Vec::new(),
            manifest: m.into(),
        }
    }

    fn add(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((path.into(), bytes.into()));
    }

    fn jsonl<T: Serialize>(&mut self, path: impl Into<PathBuf>, items: impl IntoIterator<Item = T>) -> Result<()> {
        let text = to_jsonl(items)?;
        self.add(path, text);
        Ok(())
    }

    fn commit(self, manifest: &RunManifest) -> Result<()> {
        for (path, bytes) in &self.files {
            write_atomic(path, bytes)?;
        }
        let mut text = serde_json::to_string_pretty(manifest)?;
        text.push('\n');
        write_atomic(&self.manifest, text.as_bytes())
    }
}

fn manifest(command: &str, settings: &Settings, inputs: Inputs, calls: BTreeMap<String, u64>, warnings: &Warnings) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        config: settings.pipeline.clone(),
        inputs: inputs.0,
        calls,
        warnings: warnings.snapshot(),
    }
}

type Upstream = BTreeSet<(String, Option<String>, String)>;

/// Collects the warnings recorded by the producer of `path`, so a chain of
/// stage commands reports what the one-shot pipeline would.
fn import_upstream(path: &Path, upstream: &mut Upstream) -> Result<()> {
    let mut m = path.as_os_str().to_owned();
    m.push(".manifest.json");
    let m = PathBuf::from(m);
    if m.exists() {
        let text = std::fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
        let prior: RunManifest = serde_json::from_str(&text)?;
        upstream.extend(prior.warnings.into_iter().map(|w| (w.stage, w.query_id, w.message)));
    }
    Ok(())
}

fn read_stage<T: serde::de::DeserializeOwned>(path: &Path, label: &str, inputs: &mut Inputs, upstream: &mut Upstream) -> Result<Vec<T>> {
    let items = read_jsonl(path)?;
    inputs.add(label, path)?;
    import_upstream(path, upstream)?;
    Ok(items)
}

fn carry(upstream: Upstream) -> Warnings {
    let w = Warnings::new();
    for (stage, qid, message) in upstream {
        w.record(Warning {
            stage,
            query_id: qid,
            message,
        });
    }
    w
}

/// Queries from the configured query file, with upstream warnings.
fn stage_queries(settings: &Settings, inputs: &mut Inputs, upstream: &mut Upstream) -> Result<Vec<Query>> {
    let queries = settings.queries(inputs)?;
    if let Some(path) = &settings.paths.queries {
        import_upstream(path, upstream)?;
    }
    Ok(queries)
}

pub async fn run(command: Command, overrides: &Overrides) -> Result<()> {
    let settings = Settings::resolve(overrides)?;
    let config = &settings.pipeline;
    let mut inputs = Inputs::default();
    let mut upstream = BTreeSet::new();
    if let Some(path) = &settings.config_file {
        inputs.add("config", path)?;
    }
    match command {
        Command::Caption { out } => {
            let queries = stage_queries(&settings, &mut inputs, &mut upstream)?;
            let corpus = settings.corpus(&mut inputs)?;
            let engine = settings.engine(corpus, &mut inputs, false)?;
            let warnings = carry(upstream);
            let captioned = engine.caption(&queries, config, &warnings).await?;
            let mut o = Outputs::beside(&out);
            o.jsonl(&out, &captioned)?;
            o.commit(&manifest("caption", &settings, inputs, engine.client().calls_by_tag(), &warnings))
        }
        Command::Expand { out } => {
            let queries = stage_queries(&settings, &mut inputs, &mut upstream)?;
            let corpus = settings.corpus(&mut inputs)?;
            let engine = settings.engine(corpus, &mut inputs, false)?;
            let warnings = carry(upstream);
            let expanded = engine.expand(&queries, config, &warnings).await?;
            let mut o = Outputs::beside(&out);
            o.jsonl(&out, &expanded)?;
            o.commit(&manifest("expand", &settings, inputs, engine.client().calls_by_tag(), &warnings))
        }
        Command::Index { out } => {
            let corpus = settings.corpus(&mut inputs)?;
            let ids: Vec<String> = corpus.iter().map(|d| d.id.clone()).collect();
            let vectors: Vec<EmbeddingVector> = match &settings.embedding.remote {
                Some(remote) => {
                    let r = RemoteEmbedder::from_config(remote)?;
                    stream::iter(corpus.iter().map(|d| {
                        let r = &r;
                        async move { r.embed(&d.text).await.map_err(|e| e.for_query(&d.id)) }
                    }))
                    .buffered(config.max_concurrency.max(1))
                    .try_collect()
                    .await?
                }
                None => {
                    let h = HashingEmbedder::new(settings.embedding.dim)?;
                    corpus.iter().map(|d| h.embed(&d.text)).collect()
                }
            };
            write_embedding_rows(&out, &ids, &vectors)?;
            let warnings = Warnings::new();
            Outputs::beside(&out).commit(&manifest("index", &settings, inputs, BTreeMap::new(), &warnings))
        }
        Command::Retrieve { out } => {
            let queries = stage_queries(&settings, &mut inputs, &mut upstream)?;
            let corpus = settings.corpus(&mut inputs)?;
            let engine = settings.engine(corpus, &mut inputs, settings.needs_dense())?;
            let warnings = carry(upstream);
            let candidates = engine.retrieve(&queries, config, &warnings).await?;
            let mut o = Outputs::beside(&out);
            o.jsonl(&out, &candidates)?;
            o.commit(&manifest("retrieve", &settings, inputs, BTreeMap::new(), &warnings))
        }
        Command::Rerank { candidates, out } => {
            let queries = stage_queries(&settings, &mut inputs, &mut upstream)?;
            let corpus = settings.corpus(&mut inputs)?;
            let cands: Vec<RankedList> = read_stage(&candidates, "candidates", &mut inputs, &mut upstream)?;
            let engine = settings.engine(corpus, &mut inputs, false)?;
            let warnings = carry(upstream);
            let passes = rerank_passes(engine.client(), &queries, &cands, engine.corpus(), config, &warnings).await?;
            let mut o = Outputs::beside(&out);
            o.jsonl(&out, &passes)?;
            o.commit(&manifest("rerank", &settings, inputs, engine.client().calls_by_tag(), &warnings))
        }
        Command::Fuse { candidates, rerank_out, out } => {
            let cands: Vec<RankedList> = read_stage(&candidates, "candidates", &mut inputs, &mut upstream)?;
            let outcomes: Vec<PassOutcome> = read_stage(&rerank_out, "passes", &mut inputs, &mut upstream)?;
            let warnings = carry(upstream);
            let runs = cands
                .iter()
                .map(|c| fuse_passes(&outcomes, c, config, &warnings))
                .collect::<Result<Vec<_>>>()?;
            let mut o = Outputs::beside(&out);
            o.jsonl(&out, &runs)?;
            o.commit(&manifest("fuse", &settings, inputs, BTreeMap::new(), &warnings))
        }
        Command::Eval { run, out } => {
            let queries = stage_queries(&settings, &mut inputs, &mut upstream)?;
            let runs: Vec<RankedList> = read_stage(&run, "run", &mut inputs, &mut upstream)?;
            let warnings = carry(upstream);
            // qrels load warnings stay out of the report, as in `pipeline`
            let qrels = settings.qrels(&mut inputs, &Warnings::new())?;
            let report = evaluate_run(&runs, &qrels, &queries, expandrank::eval::NDCG_DEPTH, &warnings)?;
            print!("{}", report.to_table());
            let mut o = Outputs::beside(&out);
            o.add(&out, report.to_jsonl()?);
            o.commit(&manifest("eval", &settings, inputs, BTreeMap::new(), &warnings))
        }
        Command::Pipeline { out } => {
            let corpus = settings.corpus(&mut inputs)?;
            let queries = settings.queries(&mut inputs)?;
            let load = Warnings::new();
            let qrels = settings.qrels(&mut inputs, &load)?;
            let engine = settings.engine(corpus, &mut inputs, settings.needs_dense())?;
            let result = engine.run(&queries, &qrels, config).await?;
            print!("{}", result.report.to_table());
            let mut o = Outputs {
                files: Vec::new(),
                manifest: out.join("manifest.json"),
            };
            o.jsonl(out.join("queries.jsonl"), &result.queries)?;
            o.jsonl(out.join("candidates.jsonl"), &result.candidates)?;
            if config.rerank_on {
                o.jsonl(out.join("passes.jsonl"), &result.passes)?;
            }
            o.jsonl(out.join("runs.jsonl"), &result.runs)?;
            o.add(out.join("report.jsonl"), result.report.to_jsonl()?);
            o.add(out.join("report.txt"), result.report.to_table());
            let m = RunManifest {
                command: "pipeline".into(),
                config: config.clone(),
                inputs: inputs.0,
                calls: result.calls,
                warnings: result.warnings,
            };
            o.commit(&m)
        }
        Command::MineNegatives { out, m } => {
            let queries = stage_queries(&settings, &mut inputs, &mut upstream)?;
            let corpus = settings.corpus(&mut inputs)?;
            let warnings = carry(upstream);
            let qrels = settings.qrels(&mut inputs, &warnings)?;
            let m = m.unwrap_or(config.hard_negatives);
            let index = bm25_build(&corpus, config.bm25)?;
            let judged: Vec<Query> = queries.into_iter().filter(|q| qrels.has_query(&q.id)).collect();
            let mined = expandrank::train::mine_all(&index, &judged, &qrels, m, &warnings)?;
            #[derive(Serialize)]
            struct Mined<'a> {
                query_id: &'a str,
                positives: Vec<&'a str>,
                negatives: &'a [String],
            }
            let records: Vec<Mined> = judged
                .iter()
                .zip(&mined)
                .map(|(q, negatives)| Mined {
                    query_id: &q.id,
                    positives: qrels
                        .for_query(&q.id)
                        .map(|g| g.iter().filter(|(_, &v)| v > 0).map(|(d, _)| d.as_str()).collect())
                        .unwrap_or_default(),
                    negatives,
                })
                .collect();
            let mut o = Outputs::beside(&out);
            o.jsonl(&out, &records)?;
            o.commit(&manifest("mine-negatives", &settings, inputs, BTreeMap::new(), &warnings))
        }
        Command::TrainToy(a) => {
            use rand::SeedableRng;
            let data = synthetic_instances(a.instances, a.dim, a.negatives, a.noise, a.seed)?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(1));
            let encoder = ToyEncoder::random(a.dim, a.dim, 1.0, &mut rng)?;
            let cfg = TrainConfig {
                tau: a.tau,
                learning_rate: a.lr,
                batch_size: a.batch_size,
                steps: a.steps,
            };
            let outcome = train_toy(encoder, &data, &cfg)?;
            let first = outcome.trace.first().map_or(f64::NAN, |r| r.loss);
            let last = outcome.trace.last().map_or(f64::NAN, |r| r.loss);
            println!("steps {}  loss {first:.4} -> {last:.4}", outcome.trace.len());
            write_loss_trace(&a.out, &outcome.trace)
        }
        Command::Sweep { grid, depths, out } => {
            let corpus = settings.corpus(&mut inputs)?;
            let queries = settings.queries(&mut inputs)?;
            let load = Warnings::new();
            let qrels = settings.qrels(&mut inputs, &load)?;
            let dense = settings.needs_dense() || matches!(grid, Grid::Retrievers);
            let engine = settings.engine(corpus, &mut inputs, dense)?;
            let mut o = Outputs::beside(&out);
            match grid {
                Grid::Ladder | Grid::K0 => {
                    let g = match grid {
                        Grid::Ladder => ablation_ladder(config),
                        _ => k0_sweep(config, &depths),
                    };
                    let rows = sweep(&engine, &queries, &qrels, &g).await?;
                    print!("{}", render_sweep(&rows));
                    o.jsonl(&out, &rows)?;
                }
                Grid::Retrievers => {
                    let rows = plug_and_play(&engine, &queries, &qrels, config, &[RetrieverKind::Bm25, RetrieverKind::Dense]).await?;
                    print!("{}", render_plug_and_play(&rows));
                    o.jsonl(&out, &rows)?;
                }
            }
            o.commit(&manifest("sweep", &settings, inputs, engine.client().calls_by_tag(), &load))
        }
    }
}
