//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs with `harness = false`, so `cargo test --test acceptance` prints the
//! summary directly and exits nonzero if any criterion fails. Oracles here
//! are written from the formulas, without calling back into the code under
//! test.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use expandrank::config::{Bm25Params, StageToggle};
use expandrank::eval::{ablation_ladder, plug_and_play, render_plug_and_play, render_sweep, sweep};
use expandrank::ingest::{load_corpus, load_qrels, load_queries, read_jsonl, CaptionCache, ExpansionCache};
use expandrank::llm::{CompletionRequest, FixtureRecord, LlmClient, Message, MockBackend, RetryPolicy, TAG_CAPTION, TAG_EXPAND};
use expandrank::retrieve::{bm25_build, bm25_search, dense_search, DenseIndex};
use expandrank::train::{batch_loss, infonce_grad, infonce_loss, FeatureVector, ToyEncoder, TrainingInstance};
use expandrank::{
    ndcg_at_k, parse_permutation, rrf_fuse, Corpus, Document, EmbeddingVector, Engine, PipelineConfig, Qrels, Query,
    RankedEntry, RankedList, RetrieverKind, Stage, Warnings,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() < tol
}

// ---------------------------------------------------------------- 1. RRF

struct FusedOracle {
    ids: Vec<String>,
    scores: Vec<f64>,
}

/// Sum of 1/(rank + k) per candidate, then selection of the best remaining
/// candidate K1 times.
fn rrf_oracle(perms: &[Vec<usize>], cands: &[(String, f64)], k_rrf: f64, k1: usize) -> FusedOracle {
    let mut fused = vec![0.0; cands.len()];
    let mut ranked = vec![false; cands.len()];
    for (pos, slot) in fused.iter_mut().enumerate() {
        for p in perms {
            for (r, &idx) in p.iter().enumerate() {
                if idx == pos + 1 {
                    *slot += 1.0 / ((r + 1) as f64 + k_rrf);
                    ranked[pos] = true;
                }
            }
        }
    }
    let better = |a: usize, b: usize| -> bool {
        if fused[a] != fused[b] {
            return fused[a] > fused[b];
        }
        if cands[a].1 != cands[b].1 {
            return cands[a].1 > cands[b].1;
        }
        cands[a].0 < cands[b].0
    };
    let mut left: Vec<usize> = (0..cands.len()).filter(|&i| ranked[i]).collect();
    let mut out = FusedOracle {
        ids: Vec::new(),
        scores: Vec::new(),
    };
    while out.ids.len() < k1 && !left.is_empty() {
        let mut best = 0;
        for j in 1..left.len() {
            if better(left[j], left[best]) {
                best = j;
            }
        }
        let i = left.remove(best);
        out.ids.push(cands[i].0.clone());
        out.scores.push(fused[i]);
    }
    out
}

fn candidate_list(cands: &[(String, f64)]) -> RankedList {
    let mut sorted = cands.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    RankedList::new(
        "q",
        Stage::Retrieval,
        sorted
            .into_iter()
            .map(|(doc_id, score)| RankedEntry { doc_id, score })
            .collect(),
    )
    .unwrap()
}

fn criterion_rrf() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases = 2000;
    for case in 0..cases {
        let k0 = rng.random_range(1..=100);
        let t = rng.random_range(1..=7);
        let k1 = rng.random_range(1..=k0);
        let k_rrf = [10.0, 60.0, 100.0][rng.random_range(0..3)];
        // coarse retrieval scores so ties exercise the fallbacks
        let mut names: Vec<usize> = (0..k0).collect();
        names.shuffle(&mut rng);
        let raw: Vec<(String, f64)> = names
            .iter()
            .map(|n| (format!("d{n}"), f64::from(rng.random_range(0..8u8)) / 8.0))
            .collect();
        let list = candidate_list(&raw);
        let cands: Vec<(String, f64)> = list.entries().iter().map(|e| (e.doc_id.clone(), e.score)).collect();
        let perms: Vec<Vec<usize>> = (0..t)
            .map(|_| {
                let mut p: Vec<usize> = (1..=k0).collect();
                p.shuffle(&mut rng);
                p.truncate(rng.random_range(1..=k0));
                p
            })
            .collect();
        let typed: Vec<_> = perms.iter().map(|p| expandrank::Permutation::new(p.clone(), k0).unwrap()).collect();
        let got = rrf_fuse(&typed, &list, k_rrf, k1).map_err(|e| e.to_string())?;
        let want = rrf_oracle(&perms, &cands, k_rrf, k1);
        let ids: Vec<&str> = got.doc_ids().collect();
        ensure!(ids == want.ids, "case {case}: order {ids:?} != {:?}", want.ids);
        for (e, w) in got.entries().iter().zip(&want.scores) {
            ensure!(close(e.score, *w, 1e-12), "case {case}: score {} != {w}", e.score);
        }
    }

    let abc = candidate_list(&[("d1".into(), 0.9), ("d2".into(), 0.8), ("d3".into(), 0.7)]);
    let five: Vec<_> = (0..5).map(|_| expandrank::Permutation::identity(3)).collect();
    let top = rrf_fuse(&five, &abc, 60.0, 3).map_err(|e| e.to_string())?;
    ensure!(close(top.entries()[0].score, 5.0 / 61.0, 1e-15), "5/61 anchor: {}", top.entries()[0].score);
    let two = [
        expandrank::Permutation::new(vec![1, 2, 3], 3).unwrap(),
        expandrank::Permutation::new(vec![3, 1, 2], 3).unwrap(),
    ];
    let f = rrf_fuse(&two, &abc, 60.0, 3).map_err(|e| e.to_string())?;
    let ids: Vec<&str> = f.doc_ids().collect();
    ensure!(ids == ["d1", "d3", "d2"], "two-pass anchor order {ids:?}");
    let s: Vec<f64> = f.entries().iter().map(|e| e.score).collect();
    ensure!(
        close(s[0], 1.0 / 61.0 + 1.0 / 62.0, 1e-15)
            && close(s[1], 1.0 / 63.0 + 1.0 / 61.0, 1e-15)
            && close(s[2], 1.0 / 62.0 + 1.0 / 63.0, 1e-15)
            && close(s[0], 0.0325225, 1e-7)
            && close(s[1], 0.0322665, 1e-7)
            && close(s[2], 0.0320020, 1e-7),
        "two-pass anchor scores {s:?}"
    );
    Ok(format!("{cases} randomized cases, anchors 5/61 and [d1, d3, d2]"))
}

// ---------------------------------------------------------------- 2. nDCG

fn dcg(grades: &[u32], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// Best DCG over every ordering of the judged documents (Heap's algorithm).
fn brute_idcg(mut grades: Vec<u32>, k: usize) -> f64 {
    let n = grades.len();
    let mut best = dcg(&grades, k);
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                grades.swap(0, i);
            } else {
                grades.swap(c[i], i);
            }
            best = best.max(dcg(&grades, k));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn ranking(ids: &[&str]) -> RankedList {
    let n = ids.len();
    RankedList::new(
        "q",
        Stage::Retrieval,
        ids.iter()
            .enumerate()
            .map(|(i, d)| RankedEntry {
                doc_id: d.to_string(),
                score: (n - i) as f64,
            })
            .collect(),
    )
    .unwrap()
}

fn criterion_ndcg() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cases = 1500;
    for case in 0..cases {
        let pool = rng.random_range(1..=12);
        let judged = rng.random_range(0..=pool.min(7));
        let mut qrels = Qrels::new();
        let mut grade_of = BTreeMap::new();
        for j in 0..judged {
            let g = rng.random_range(0..=3);
            qrels.insert("q", &format!("d{j}"), g);
            grade_of.insert(format!("d{j}"), g);
        }
        let mut order: Vec<String> = (0..pool).map(|j| format!("d{j}")).collect();
        order.shuffle(&mut rng);
        order.truncate(rng.random_range(0..=pool));
        let k = [1, 3, 5, 10][rng.random_range(0..4)];
        let refs: Vec<&str> = order.iter().map(String::as_str).collect();
        let got = ndcg_at_k(&ranking(&refs), &qrels, k);
        let run_grades: Vec<u32> = order.iter().map(|d| grade_of.get(d).copied().unwrap_or(0)).collect();
        let idcg = brute_idcg(grade_of.values().copied().collect(), k);
        let want = if idcg == 0.0 { 0.0 } else { dcg(&run_grades, k) / idcg };
        ensure!(close(got, want, 1e-12), "case {case}: {got} != {want}");
    }

    let mut one = Qrels::new();
    one.insert("q", "d1", 1);
    let a = ndcg_at_k(&ranking(&["d2", "d1", "d3"]), &one, 10);
    ensure!(close(a, 1.0 / 3f64.log2(), 1e-15) && close(a, 0.630930, 5e-7), "anchor 0.630930: {a}");
    let mut two = Qrels::new();
    two.insert("q", "d1", 2);
    two.insert("q", "d2", 1);
    let b = ndcg_at_k(&ranking(&["d2", "d1"]), &two, 10);
    let l3 = 3f64.log2();
    ensure!(close(b, (1.0 + 3.0 / l3) / (3.0 + 1.0 / l3), 1e-15) && close(b, 0.796708, 5e-7), "anchor 0.796708: {b}");
    Ok(format!("{cases} randomized instances, anchors 0.630930 and 0.796708"))
}

// ---------------------------------------------------------------- 3. InfoNCE

fn vector(x: Vec<f64>) -> EmbeddingVector {
    EmbeddingVector::new(x).unwrap()
}

fn random_features(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn criterion_infonce() -> Outcome {
    let q = vector(vec![0.3, -0.4, 1.2]);
    for m in [1usize, 7, 31] {
        let negs = vec![q.clone(); m];
        let l = infonce_loss(&q, &q, &negs, 0.02).map_err(|e| e.to_string())?;
        let want = ((1 + m) as f64).ln();
        ensure!(close(l, want, 1e-12), "equal scores, M={m}: {l} != {want}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // direct softmax cross-entropy at moderate temperature
    for case in 0..200 {
        let dim = rng.random_range(2..=6);
        let m = rng.random_range(1..=8);
        let tau = rng.random_range(0.2..2.0);
        let q = random_features(&mut rng, dim);
        let p = random_features(&mut rng, dim);
        let negs: Vec<Vec<f64>> = (0..m).map(|_| random_features(&mut rng, dim)).collect();
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let num = (cos(&q, &p) / tau).exp();
        let den = num + negs.iter().map(|n| (cos(&q, n) / tau).exp()).sum::<f64>();
        let want = -(num / den).ln();
        let negv: Vec<_> = negs.into_iter().map(vector).collect();
        let got = infonce_loss(&vector(q), &vector(p), &negv, tau).map_err(|e| e.to_string())?;
        ensure!(close(got, want, 1e-10), "loss case {case}: {got} != {want}");
    }

    let taus = [1.0, 0.5, 0.1, 0.05, 0.02];
    let draws = 150;
    let mut worst: f64 = 0.0;
    for draw in 0..draws {
        let tau = taus[draw % taus.len()];
        let in_dim = rng.random_range(2..=5);
        let out_dim = rng.random_range(2..=4);
        let m = rng.random_range(1..=3);
        let batch: Vec<TrainingInstance> = (0..rng.random_range(1..=3))
            .map(|i| {
                let negs = (0..m)
                    .map(|j| FeatureVector::new(format!("n{i}-{j}"), random_features(&mut rng, in_dim)))
                    .collect();
                TrainingInstance::new(
                    FeatureVector::new(format!("q{i}"), random_features(&mut rng, in_dim)),
                    FeatureVector::new(format!("p{i}"), random_features(&mut rng, in_dim)),
                    negs,
                    m,
                )
                .unwrap()
            })
            .collect();
        let enc = ToyEncoder::random(in_dim, out_dim, 1.0, &mut rng).map_err(|e| e.to_string())?;
        let analytic = infonce_grad(&enc, &batch, tau).map_err(|e| e.to_string())?.grad;
        let h = 1e-5;
        let mut numeric = vec![0.0; analytic.len()];
        for (w, slot) in numeric.iter_mut().enumerate() {
            let at = |delta: f64| {
                let mut e = enc.clone();
                let mut ws = e.weights().to_vec();
                ws[w] += delta;
                e.set_weights(ws).unwrap();
                batch_loss(&e, &batch, tau).unwrap()
            };
            *slot = (at(h) - at(-h)) / (2.0 * h);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        let rel = diff / scale;
        worst = worst.max(rel);
        ensure!(rel < 1e-4, "draw {draw} (tau {tau}): relative gradient error {rel:.2e}");
    }
    Ok(format!(
        "ln(1+M) for M in {{1, 7, 31}}; {draws} gradient draws down to tau 0.02, worst relative error {worst:.1e}"
    ))
}

// ---------------------------------------------------------------- 4. dense

fn dense_oracle(docs: &[(String, Vec<f64>)], q: &[f64], k0: usize) -> Vec<String> {
    let nq = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, &str)> = docs
        .iter()
        .map(|(id, d)| {
            let dot: f64 = d.iter().zip(q).map(|(a, b)| a * b).sum();
            let nd = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            (dot / (nd * nq), id.as_str())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.into_iter().take(k0).map(|(_, id)| id.to_string()).collect()
}

fn search_ids(docs: &[(String, Vec<f64>)], q: &[f64], k0: usize) -> Result<Vec<String>, String> {
    let index = DenseIndex::build(docs.iter().map(|(id, v)| (id.clone(), vector(v.clone())))).map_err(|e| e.to_string())?;
    let list = dense_search(&index, "q", &vector(q.to_vec()), k0).map_err(|e| e.to_string())?;
    Ok(list.doc_ids().map(String::from).collect())
}

fn criterion_dense() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let instances = 200;
    for case in 0..instances {
        let n = if case % 10 == 0 { 1000 } else { rng.random_range(1..=300) };
        let dim = if case % 10 == 0 { 64 } else { rng.random_range(1..=64) };
        let k0 = rng.random_range(1..=n + 5);
        let mut docs: Vec<(String, Vec<f64>)> = (0..n)
            .map(|i| (format!("doc{i:04}"), random_features(&mut rng, dim)))
            .collect();
        // exact duplicates force ties, which fall back to id order
        let dup = case % 3 == 0 && n > 2;
        if dup {
            for _ in 0..n / 10 + 1 {
                let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
                docs[a].1 = docs[b].1.clone();
            }
        }
        docs.retain(|(_, v)| v.iter().any(|x| *x != 0.0));
        let q = random_features(&mut rng, dim);
        let got = search_ids(&docs, &q, k0)?;
        ensure!(got == dense_oracle(&docs, &q, k0), "case {case}: ranking differs from full sort");

        // Powers of two rescale without rounding, so even exact ties survive;
        // arbitrary positive factors are used only when there are no duplicates.
        let scaled: Vec<(String, Vec<f64>)> = docs
            .iter()
            .map(|(id, v)| {
                let c = if dup {
                    2f64.powi(rng.random_range(-8..=8))
                } else {
                    rng.random_range(0.01..100.0)
                };
                (id.clone(), v.iter().map(|x| c * x).collect())
            })
            .collect();
        ensure!(search_ids(&scaled, &q, k0)? == got, "case {case}: positive rescaling changed the ranking");
    }
    Ok(format!("{instances} instances up to 1000 docs x dim 64, with rescaling"))
}

// ---------------------------------------------------------------- 5. BM25

fn criterion_bm25() -> Outcome {
    let corpus = Corpus::new(vec![
        Document::new("d1", "glacier moraine"),
        Document::new("d2", "basalt dike"),
    ])
    .unwrap();
    let idx = bm25_build(&corpus, Bm25Params::default()).map_err(|e| e.to_string())?;
    let hits = bm25_search(&idx, "q", "glacier", 10).map_err(|e| e.to_string())?;
    ensure!(hits.len() == 1 && hits.entries()[0].doc_id == "d1", "only d1 should match");
    let s = hits.entries()[0].score;
    ensure!(close(s, std::f64::consts::LN_2, 1e-9), "anchor ln 2: {s}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let word = |i: usize| format!("w{i}");
    let corpora = 300;
    for case in 0..corpora {
        let vocab = rng.random_range(3..20);
        let mut docs: Vec<Document> = (0..rng.random_range(1..15))
            .map(|i| {
                let text: Vec<String> = (0..rng.random_range(1..12)).map(|_| word(rng.random_range(0..vocab))).collect();
                Document::new(format!("r{i}"), text.join(" "))
            })
            .collect();
        // a pair of equal-length documents that differ in one query-term count
        let len = rng.random_range(2..12);
        let term = word(rng.random_range(0..vocab));
        let tf_low = rng.random_range(0..len);
        let fill = "zfiller";
        let base: Vec<String> = (0..len)
            .map(|i| if i < tf_low { term.clone() } else { fill.to_string() })
            .collect();
        let mut more = base.clone();
        more[tf_low] = term.clone();
        docs.push(Document::new("low", base.join(" ")));
        docs.push(Document::new("high", more.join(" ")));
        let corpus = Corpus::new(docs).unwrap();
        let params = Bm25Params {
            k1: rng.random_range(0.1..3.0),
            b: rng.random_range(0.0..=1.0),
        };
        let idx = bm25_build(&corpus, params).map_err(|e| e.to_string())?;
        let extra = word(rng.random_range(0..vocab));
        let q = format!("{term} {extra}");
        let scores = idx.score_all(&q);
        let at = |id: &str| {
            let row = idx.doc_ids().iter().position(|d| d == id).unwrap();
            scores.get(&row).copied().unwrap_or(0.0)
        };
        ensure!(
            at("high") >= at("low"),
            "case {case}: tf {} scored {} below tf {} at {}",
            tf_low + 1,
            at("high"),
            tf_low,
            at("low")
        );
    }
    Ok(format!("ln 2 anchor; tf monotonicity over {corpora} random corpora"))
}

// ---------------------------------------------------------------- 6. parser

fn fuzz_string(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 16] = [
        "[", "]", ">", " ", "\n", "-", "a", "x", "0", "1", "7", "12", "99", "[3]", "[ 2 ]", "[18446744073709551616]",
    ];
    (0..rng.random_range(0..40))
        .map(|_| PIECES[rng.random_range(0..PIECES.len())])
        .collect()
}

/// Bracketed integers on one line: drop out-of-range and repeats, fill from
/// retrieval order, truncate.
fn parser_oracle(values: &[u128], k0: usize, k1: usize) -> Vec<usize> {
    let k = k0.min(k1);
    let mut out: Vec<usize> = Vec::new();
    for &v in values {
        if v >= 1 && v <= k0 as u128 && !out.contains(&(v as usize)) && out.len() < k {
            out.push(v as usize);
        }
    }
    for i in 1..=k0 {
        if out.len() >= k {
            break;
        }
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

fn criterion_parser() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 10_000;
    for case in 0..n {
        let k0 = rng.random_range(1..=30);
        let k1 = rng.random_range(1..=30);
        let structured = case % 2 == 0;
        let (text, values) = if structured {
            let values: Vec<u128> = (0..rng.random_range(0..15))
                .map(|_| match rng.random_range(0..10) {
                    0 => 0,
                    1 => u128::from(u64::MAX) + 1,
                    2 => rng.random_range(31..200),
                    _ => rng.random_range(1..=k0 as u128),
                })
                .collect();
            let text = values.iter().map(|v| format!("[{v}]")).collect::<Vec<_>>().join(" > ");
            (text, Some(values))
        } else {
            (fuzz_string(&mut rng), None)
        };
        let p = parse_permutation(&text, k0, k1);
        let idx = p.indices();
        ensure!(idx.len() == k0.min(k1), "case {case}: length {} for {text:?}", idx.len());
        ensure!(
            expandrank::Permutation::new(idx.to_vec(), k0).is_ok(),
            "case {case}: invalid permutation {idx:?} for {text:?}"
        );
        if let Some(values) = values {
            let want = parser_oracle(&values, k0, k1);
            ensure!(idx == want, "case {case}: {idx:?} != {want:?} for {text:?}");
        }
    }
    let a = parse_permutation("[2] > [5] > [1]", 5, 3);
    ensure!(a.indices() == [2, 5, 1], "anchor [2,5,1]: {:?}", a.indices());
    let b = parse_permutation("I think [3] is best, then [1] again [3]", 5, 3);
    ensure!(b.indices() == [3, 1, 2], "anchor [3,1,2]: {:?}", b.indices());
    let c = parse_permutation("no brackets at all", 5, 2);
    ensure!(c.indices() == [1, 2], "anchor [1,2]: {:?}", c.indices());
    let e = parse_permutation("", 4, 10);
    ensure!(e.indices() == [1, 2, 3, 4], "empty input: {:?}", e.indices());
    Ok(format!("{n} fuzzed strings, half checked against a dedupe-then-fill oracle"))
}

// ---------------------------------------------------------------- 7. fixtures

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo")
}

struct Demo {
    corpus: Corpus,
    queries: Vec<Query>,
    qrels: Qrels,
    stages: Vec<FixtureRecord>,
}

impl Demo {
    fn load() -> Result<Self, String> {
        let dir = demo_dir();
        let e = |e: expandrank::Error| e.to_string();
        Ok(Demo {
            corpus: load_corpus(dir.join("corpus.jsonl")).map_err(e)?,
            queries: load_queries(dir.join("queries.jsonl")).map_err(e)?,
            qrels: load_qrels(dir.join("qrels.tsv"), &Warnings::new()).map_err(e)?,
            stages: read_jsonl(dir.join("llm.jsonl")).map_err(e)?,
        })
    }

    fn mock(&self, rerank: &str) -> Result<MockBackend, String> {
        let mut records = self.stages.clone();
        records.extend(read_jsonl::<FixtureRecord>(demo_dir().join(rerank)).map_err(|e| e.to_string())?);
        Ok(MockBackend::from_records(records).on_miss(expandrank::llm::MissPolicy::Fail))
    }

    fn engine(&self, rerank: &str) -> Result<Engine, String> {
        let client = LlmClient::new(Arc::new(self.mock(rerank)?), 8);
        Engine::new(client, self.corpus.clone())
            .with_hashing_embedder(256)
            .map_err(|e| e.to_string())
    }
}

fn criterion_fixture(rt: &tokio::runtime::Runtime) -> Outcome {
    let demo = Demo::load()?;
    ensure!(
        demo.corpus.len() == 50 && demo.queries.len() == 10,
        "fixture has {} docs and {} queries",
        demo.corpus.len(),
        demo.queries.len()
    );
    let domains: std::collections::BTreeSet<_> = demo.queries.iter().map(|q| q.domain_or_default()).collect();
    ensure!(domains.len() == 2, "fixture spans {} domains", domains.len());
    let full = PipelineConfig::default();
    let e = |e: expandrank::Error| e.to_string();

    // (a) oracle rerank
    let oracle = demo.engine("rerank_oracle.jsonl")?;
    let run = rt.block_on(oracle.run(&demo.queries, &demo.qrels, &full)).map_err(e)?;
    ensure!(run.report.macro_ndcg == 1.0, "(a) oracle macro nDCG@10 = {}", run.report.macro_ndcg);
    ensure!(run.warnings.is_empty(), "(a) unexpected warnings {:?}", run.warnings);

    // (b) identity rerank against rerank off
    let identity = demo.engine("rerank_identity.jsonl")?;
    let reranked = rt.block_on(identity.run(&demo.queries, &demo.qrels, &full)).map_err(e)?;
    let off = PipelineConfig {
        rerank_on: false,
        ..full.clone()
    };
    let plain = rt.block_on(identity.run(&demo.queries, &demo.qrels, &off)).map_err(e)?;
    ensure!(reranked.report == plain.report, "(b) identity rerank changed the metrics");

    // (c) ablation ladder
    let ladder = ablation_ladder(&full);
    let rows = rt.block_on(sweep(&identity, &demo.queries, &demo.qrels, &ladder)).map_err(e)?;
    ensure!(rows.len() == 5, "(c) ladder has {} rows", rows.len());
    let stages: Vec<_> = rows.iter().map(|r| r.config.enabled_stages()).collect();
    ensure!(stages[0].is_empty(), "(c) first row enables {:?}", stages[0]);
    for w in stages.windows(2) {
        ensure!(w[0].is_subset(&w[1]) && w[1].len() == w[0].len() + 1, "(c) rows not nested: {w:?}");
    }
    ensure!(stages[4].contains(&StageToggle::DoubleRerank), "(c) last row lacks multi-pass fusion");
    ensure!(rows.iter().all(|r| r.closure), "(c) closure violated");
    print!("{}", indent(&render_sweep(&rows)));

    // (d) a second engine over the same on-disk caches
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let caches = || -> Result<(CaptionCache, ExpansionCache), String> {
        Ok((
            CaptionCache::open(dir.path().join("captions.jsonl")).map_err(e)?,
            ExpansionCache::open(dir.path().join("expansions.jsonl")).map_err(e)?,
        ))
    };
    let (c1, x1) = caches()?;
    let first = demo.engine("rerank_oracle.jsonl")?.with_caches(c1, x1);
    let one = rt.block_on(first.run(&demo.queries, &demo.qrels, &full)).map_err(e)?;
    ensure!(one.calls.get(TAG_CAPTION) == Some(&10), "(d) first run made {:?} caption calls", one.calls.get(TAG_CAPTION));
    let (c2, x2) = caches()?;
    let second = demo.engine("rerank_oracle.jsonl")?.with_caches(c2, x2);
    let two = rt.block_on(second.run(&demo.queries, &demo.qrels, &full)).map_err(e)?;
    ensure!(!two.calls.contains_key(TAG_CAPTION), "(d) second run made caption calls: {:?}", two.calls);
    ensure!(!two.calls.contains_key(TAG_EXPAND), "(d) second run made expansion calls: {:?}", two.calls);
    let (j1, j2) = (one.report.to_jsonl().map_err(e)?, two.report.to_jsonl().map_err(e)?);
    ensure!(j1.as_bytes() == j2.as_bytes(), "(d) reports differ");

    Ok(format!(
        "(a) oracle macro 1.0  (b) identity = retrieval-only at {:.4}  (c) 5 nested rows  (d) 0 caption calls, identical report",
        plain.report.macro_ndcg
    ))
}

fn indent(s: &str) -> String {
    s.lines().map(|l| format!("    {l}\n")).collect()
}

// ---------------------------------------------------------------- 8. concurrency

fn criterion_concurrency(rt: &tokio::runtime::Runtime) -> Outcome {
    let reps = 20;
    let mut peaks = Vec::new();
    for rep in 0..reps {
        let mock = Arc::new(MockBackend::new().with_latency(Duration::from_millis(1 + rep % 3)));
        let client = LlmClient::new(mock.clone(), 64).with_retry(RetryPolicy::immediate(1));
        let requests: Vec<CompletionRequest> = (0..200)
            .map(|i| CompletionRequest::new("expand", vec![Message::user(format!("request {i}"))]).for_query(&format!("q{i}")))
            .collect();
        let results = rt.block_on(client.run_batch(&requests, 20));
        ensure!(results.len() == 200, "rep {rep}: {} results", results.len());
        for (i, r) in results.iter().enumerate() {
            let text = &r.as_ref().map_err(|e| e.to_string())?.text;
            ensure!(*text == format!("request {i}"), "rep {rep}: slot {i} holds {text:?}");
        }
        let peak = mock.peak_in_flight();
        ensure!(peak <= 20, "rep {rep}: {peak} requests in flight");
        peaks.push(peak);
    }
    Ok(format!(
        "{reps} repetitions of 200 requests, peak in flight {}, order preserved",
        peaks.iter().max().unwrap()
    ))
}

// ---------------------------------------------------------------- 9. plug and play

fn criterion_plug_and_play(rt: &tokio::runtime::Runtime) -> Outcome {
    let demo = Demo::load()?;
    let engine = demo.engine("rerank_identity.jsonl")?;
    let rows = rt
        .block_on(plug_and_play(
            &engine,
            &demo.queries,
            &demo.qrels,
            &PipelineConfig::default(),
            &[RetrieverKind::Bm25, RetrieverKind::Dense],
        ))
        .map_err(|e| e.to_string())?;
    ensure!(rows.len() == 2, "{} rows", rows.len());
    for r in &rows {
        ensure!(r.closure, "closure violated for {}", r.retriever);
        ensure!(
            r.base.is_finite() && r.full.is_finite() && close(r.delta, r.full - r.base, 1e-15),
            "inconsistent row {r:?}"
        );
    }
    print!("{}", indent(&render_plug_and_play(&rows)));
    Ok("bm25 and dense, base vs full with deltas, closure holds throughout".into())
}

// ----------------------------------------------------------------

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let criteria: Vec<(&str, u64, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("RRF oracle", 10, Box::new(criterion_rrf)),
        ("nDCG oracle", 10, Box::new(criterion_ndcg)),
        ("InfoNCE", 30, Box::new(criterion_infonce)),
        ("dense exactness", 30, Box::new(criterion_dense)),
        ("BM25", 30, Box::new(criterion_bm25)),
        ("parser totality", 30, Box::new(criterion_parser)),
        ("fixture end to end", 60, Box::new(|| criterion_fixture(&rt))),
        ("concurrency", 60, Box::new(|| criterion_concurrency(&rt))),
        ("plug and play", 60, Box::new(|| criterion_plug_and_play(&rt))),
    ];
    let mut failed = 0;
    for (n, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(detail) if secs > *limit as f64 => Err(format!("{detail}; took {secs:.1}s, limit {limit}s")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name} ({secs:.2}s): {detail}", n + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({secs:.2}s): {why}", n + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
