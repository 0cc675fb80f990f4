//! Comparative harnesses over pipeline configurations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvaluationReport;
use crate::config::{PipelineConfig, RetrieverKind};
use crate::error::{Error, Result};
use crate::pipeline::{Engine, PipelineRun};
use crate::types::{Qrels, Query};

/// One configuration's outcome within a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub config: PipelineConfig,
    pub report: EvaluationReport,
    pub calls: BTreeMap<String, u64>,
    /// Every final list lies inside its query's top-K0 candidates.
    pub closure: bool,
}

/// Every final list is a subset of its query's retrieval candidates.
pub fn closure_holds(run: &PipelineRun) -> bool {
    run.runs.iter().all(|r| {
        run.candidates
            .iter()
            .find(|c| c.query_id == r.query_id)
            .is_some_and(|c| r.doc_ids().all(|d| c.contains(d)))
    })
}

/// Runs the pipeline once per configuration, in grid order, on one engine so
/// cached captions and expansions are shared across rows.
pub async fn sweep(
    engine: &Engine,
    queries: &[Query],
    qrels: &Qrels,
    grid: &[(String, PipelineConfig)],
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for (label, config) in grid {
        let run = engine.run(queries, qrels, config).await?;
        rows.push(SweepRow {
            label: label.clone(),
            config: config.clone(),
            closure: closure_holds(&run) && run.candidates.iter().all(|c| c.len() <= config.k0),
            report: run.report,
            calls: run.calls,
        });
    }
    Ok(rows)
}

/// Five cumulative configurations: retriever on the raw question, then
/// adding the caption, expansion, one rerank pass, and `base.passes` fused
/// passes.
pub fn ablation_ladder(base: &PipelineConfig) -> Vec<(String, PipelineConfig)> {
    let raw = base.clone().retrieval_only();
    let caption = PipelineConfig {
        caption_on: true,
        ..raw.clone()
    };
    let expand = PipelineConfig {
        expand_on: true,
        ..caption.clone()
    };
    let single = PipelineConfig {
        rerank_on: true,
        double_rerank_on: false,
        ..expand.clone()
    };
    let double = PipelineConfig {
        double_rerank_on: true,
        ..single.clone()
    };
    vec![
        ("retriever only".into(), raw),
        ("+ caption".into(), caption),
        ("+ expansion".into(), expand),
        ("+ rerank (T=1)".into(), single),
        (format!("+ rerank (T={})", base.passes), double),
    ]
}

/// The full pipeline at each retrieval depth. K1 is capped at K0.
pub fn k0_sweep(base: &PipelineConfig, depths: &[usize]) -> Vec<(String, PipelineConfig)> {
    depths
        .iter()
        .map(|&k0| {
            (
                format!("K0={k0}"),
                PipelineConfig {
                    k0,
                    k1: base.k1.min(k0),
                    ..base.clone()
                },
            )
        })
        .collect()
}

/// Aligned table of a sweep: label, macro, micro, backend calls.
pub fn render_sweep(rows: &[SweepRow]) -> String {
    let w = rows.iter().map(|r| r.label.len()).chain([13]).max().unwrap_or(13);
    let mut s = String::new();
    let _ = writeln!(s, "{:<w$}  {:>8}  {:>8}  {:>6}", "configuration", "macro", "micro", "calls");
    for r in rows {
        let calls: u64 = r.calls.values().sum();
        let _ = writeln!(s, "{:<w$}  {:>8.4}  {:>8.4}  {:>6}", r.label, r.report.macro_ndcg, r.report.micro_ndcg, calls);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlugAndPlayRow {
    pub retriever: RetrieverKind,
    /// Macro nDCG of the retriever on the raw question.
    pub base: f64,
    /// Macro nDCG with every stage on.
    pub full: f64,
    pub delta: f64,
    /// Closure held in both configurations.
    pub closure: bool,
}

/// Each retriever alone versus the full pipeline on top of it. Expansion and
/// rerank outputs come from the same engine, so they are shared.
pub async fn plug_and_play(
    engine: &Engine,
    queries: &[Query],
    qrels: &Qrels,
    full: &PipelineConfig,
    retrievers: &[RetrieverKind],
) -> Result<Vec<PlugAndPlayRow>> {
    let mut rows = Vec::with_capacity(retrievers.len());
    for &retriever in retrievers {
        let with_full = PipelineConfig {
            retriever,
            ..full.clone()
        };
        let grid = [
            ("base".to_string(), with_full.clone().retrieval_only()),
            ("full".to_string(), with_full),
        ];
        let out = sweep(engine, queries, qrels, &grid).await?;
        rows.push(PlugAndPlayRow {
            retriever,
            base: out[0].report.macro_ndcg,
            full: out[1].report.macro_ndcg,
            delta: out[1].report.macro_ndcg - out[0].report.macro_ndcg,
            closure: out[0].closure && out[1].closure,
        });
    }
    Ok(rows)
}

pub fn render_plug_and_play(rows: &[PlugAndPlayRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<14}  {:>8}  {:>8}  {:>8}", "retriever", "base", "full", "delta");
    for r in rows {
        let _ = writeln!(s, "{:<14}  {:>8.4}  {:>8.4}  {:>+8.4}", r.retriever.to_string(), r.base, r.full, r.delta);
    }
    s
}
