//! nDCG@k, per-domain and macro/micro aggregation, and report rendering.

mod harness;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use harness::{
    ablation_ladder, closure_holds, k0_sweep, plug_and_play, render_plug_and_play, render_sweep, sweep, PlugAndPlayRow,
    SweepRow,
};

use crate::error::{Error, Result};
use crate::ingest::to_jsonl;
use crate::types::{Qrels, Query, RankedList, DEFAULT_DOMAIN};
use crate::warnings::Warnings;

/// The benchmark cutoff.
pub const NDCG_DEPTH: usize = 10;

const STAGE: &str = "eval";

fn gain(grade: u32) -> f64 {
    f64::from(grade).exp2() - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// nDCG over the top `k` with gain `2^rel - 1` and discount `log2(i + 1)`.
/// Unjudged documents have grade 0. Returns 0 when the query has no positive
/// grade, and for `k = 0`.
pub fn ndcg_at_k(ranking: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    let Some(judged) = qrels.for_query(&ranking.query_id) else {
        return 0.0;
    };
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &g)| gain(g) / discount(i + 1)).sum();
    if idcg == 0.0 {
        return 0.0;
    }
    let dcg: f64 = ranking
        .doc_ids()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(judged.get(d).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    dcg / idcg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query_id: String,
    pub domain: String,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub domain: String,
    pub queries: usize,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub k: usize,
    /// Sorted by query id.
    pub queries: Vec<QueryScore>,
    /// Sorted by domain.
    pub domains: Vec<DomainScore>,
    /// Unweighted mean of the domain means.
    pub macro_ndcg: f64,
    /// Mean over queries.
    pub micro_ndcg: f64,
    /// Warnings recorded by every stage up to and including evaluation.
    pub warning_counts: BTreeMap<String, usize>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores a run against the judgments.
///
/// Every run query must belong to `queries`. The evaluated set is the run's
/// queries plus the judged members of `queries`; a judged query with no run
/// list and a run query with no judgments both score 0 with a warning.
pub fn evaluate_run(
    runs: &[RankedList],
    qrels: &Qrels,
    queries: &[Query],
    k: usize,
    warnings: &Warnings,
) -> Result<EvaluationReport> {
    let domains: HashMap<&str, &str> = queries.iter().map(|q| (q.id.as_str(), q.domain_or_default())).collect();
    let mut by_query: BTreeMap<&str, &RankedList> = BTreeMap::new();
    for run in runs {
        if !domains.contains_key(run.query_id.as_str()) {
            return Err(Error::UnknownQuery(run.query_id.clone()));
        }
        if by_query.insert(&run.query_id, run).is_some() {
            return Err(Error::Invalid(format!("run lists query `{}` twice", run.query_id)));
        }
    }
    let mut evaluated: BTreeSet<&str> = by_query.keys().copied().collect();
    evaluated.extend(qrels.query_ids().filter(|q| domains.contains_key(q)));

    let mut scores = Vec::with_capacity(evaluated.len());
    for qid in evaluated {
        let ndcg = match by_query.get(qid) {
            None => {
                warnings.push(STAGE, Some(qid), "judged query has no ranked list, scored 0");
                0.0
            }
            Some(_) if !qrels.has_query(qid) => {
                warnings.push(STAGE, Some(qid), "query has no relevance judgments, scored 0");
                0.0
            }
            Some(run) => ndcg_at_k(run, qrels, k),
        };
        scores.push(QueryScore {
            query_id: qid.to_string(),
            domain: domains.get(qid).copied().unwrap_or(DEFAULT_DOMAIN).to_string(),
            ndcg,
        });
    }

    let mut grouped: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in &scores {
        grouped.entry(&s.domain).or_default().push(s.ndcg);
    }
    let domain_scores: Vec<DomainScore> = grouped
        .into_iter()
        .map(|(d, v)| DomainScore {
            domain: d.to_string(),
            queries: v.len(),
            ndcg: mean(v),
        })
        .collect();
    let mut warning_counts = BTreeMap::new();
    for w in warnings.snapshot() {
        *warning_counts.entry(w.stage).or_default() += 1;
    }
    Ok(EvaluationReport {
        k,
        macro_ndcg: mean(domain_scores.iter().map(|d| d.ndcg)),
        micro_ndcg: mean(scores.iter().map(|s| s.ndcg)),
        queries: scores,
        domains: domain_scores,
        warning_counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportRecord {
    Query { query_id: String, domain: String, ndcg: f64 },
    Domain { domain: String, queries: usize, ndcg: f64 },
    Macro { ndcg: f64 },
    Micro { ndcg: f64 },
    Warnings { counts: BTreeMap<String, usize> },
}

impl EvaluationReport {
    pub fn records(&self) -> Vec<ReportRecord> {
        let mut out: Vec<ReportRecord> = self
            .queries
            .iter()
            .map(|q| ReportRecord::Query {
                query_id: q.query_id.clone(),
                domain: q.domain.clone(),
                ndcg: q.ndcg,
            })
            .collect();
        out.extend(self.domains.iter().map(|d| ReportRecord::Domain {
            domain: d.domain.clone(),
            queries: d.queries,
            ndcg: d.ndcg,
        }));
        out.push(ReportRecord::Macro { ndcg: self.macro_ndcg });
        out.push(ReportRecord::Micro { ndcg: self.micro_ndcg });
        out.push(ReportRecord::Warnings {
            counts: self.warning_counts.clone(),
        });
        out
    }

    pub fn to_jsonl(&self) -> Result<String> {
        to_jsonl(self.records())
    }

    /// Aligned text table: one row per domain, then macro and micro.
    pub fn to_table(&self) -> String {
        let width = self
            .domains
            .iter()
            .map(|d| d.domain.len())
            .chain([6])
            .max()
            .unwrap_or(6);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>7}  {:>8}", "domain", "queries", format!("nDCG@{}", self.k));
        for d in &self.domains {
            let _ = writeln!(s, "{:<width$}  {:>7}  {:>8.4}", d.domain, d.queries, d.ndcg);
        }
        let n = self.queries.len();
        let _ = writeln!(s, "{:<width$}  {:>7}  {:>8.4}", "macro", n, self.macro_ndcg);
        let _ = writeln!(s, "{:<width$}  {:>7}  {:>8.4}", "micro", n, self.micro_ndcg);
        s
    }
}

/// Domains as rows and systems as columns, closed by macro and micro rows.
pub fn render_comparison(systems: &[(String, &EvaluationReport)]) -> String {
    let domains: BTreeSet<&str> = systems
        .iter()
        .flat_map(|(_, r)| r.domains.iter().map(|d| d.domain.as_str()))
        .collect();
    let first = domains.iter().map(|d| d.len()).chain([6]).max().unwrap_or(6);
    let widths: Vec<usize> = systems.iter().map(|(name, _)| name.len().max(6)).collect();
    let mut s = String::new();
    let _ = write!(s, "{:<first$}", "domain");
    for ((name, _), w) in systems.iter().zip(&widths) {
        let _ = write!(s, "  {name:>w$}");
    }
    s.push('\n');
    let mut row = |label: &str, cell: &dyn Fn(&EvaluationReport) -> Option<f64>| {
        let _ = write!(s, "{label:<first$}");
        for ((_, r), w) in systems.iter().zip(&widths) {
            match cell(r) {
                Some(v) => {
                    let _ = write!(s, "  {v:>w$.4}");
                }
                None => {
                    let _ = write!(s, "  {:>w$}", "-");
                }
            }
        }
        s.push('\n');
    };
    for d in &domains {
        row(d, &|r| r.domains.iter().find(|x| x.domain == *d).map(|x| x.ndcg));
    }
    row("macro", &|r| Some(r.macro_ndcg));
    row("micro", &|r| Some(r.micro_ndcg));
    s
}
