//! Brute-force oracles and fuzz generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use refract_core::dataset::{Demonstration, Metric, Output, TaskKind, TaskSpec};
use refract_core::refract::{ContextEntry, IclContext, RefractOptions, ZeroShotRecord};
use refract_core::retrieval::{RetrieverKind, ScoredDemo};

pub fn task(labels: &[&str]) -> TaskSpec {
    TaskSpec {
        name: "fuzz".into(),
        kind: if labels.len() == 2 {
            TaskKind::Binary
        } else {
            TaskKind::Multiclass
        },
        labels: labels.iter().map(|s| s.to_string()).collect(),
        metric: Metric::Accuracy,
        language: "en".into(),
    }
}

pub fn demo(id: impl Into<String>, input: impl Into<String>, label: &str) -> Demonstration {
    Demonstration::new(id, input, Output::Label(label.into()))
}

/// Random lowercase ASCII corpus over a small vocabulary so terms repeat
/// across documents and ties occur.
pub fn random_corpus(rng: &mut impl Rng, docs: usize, max_tokens: usize, vocab: usize) -> Vec<Demonstration> {
    let words: Vec<String> = (0..vocab).map(|i| format!("w{i}")).collect();
    (0..docs)
        .map(|i| {
            let n = rng.random_range(0..=max_tokens);
            let text: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..vocab)].as_str()).collect();
            demo(format!("d{i:04}"), text.join(" "), "a")
        })
        .collect()
}

pub fn random_query(rng: &mut impl Rng, max_tokens: usize, vocab: usize) -> String {
    // a few words may fall outside the corpus vocabulary
    let n = rng.random_range(0..=max_tokens);
    (0..n)
        .map(|_| format!("w{}", rng.random_range(0..vocab + 5)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn order_by_score(scores: Vec<(String, f64)>) -> Vec<(String, f64)> {
    let mut scores = scores;
    scores.sort_by(|a, b| (b.1 + 0.0).total_cmp(&(a.1 + 0.0)).then_with(|| a.0.cmp(&b.0)));
    scores
}

/// Cosine ranking computed from scratch: whitespace tokens (the corpora are
/// lowercase ASCII words), raw counts, smoothed idf, L2 normalization, and
/// sums taken in lexicographic term order.
pub fn tfidf_oracle(pool: &[Demonstration], query: &str) -> Vec<(String, f64)> {
    let docs: Vec<Vec<&str>> = pool.iter().map(|d| d.input.split_whitespace().collect()).collect();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in &docs {
        let uniq: HashSet<&str> = doc.iter().copied().collect();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = pool.len() as f64;
    let idf: BTreeMap<&str, f64> = df
        .iter()
        .map(|(t, &d)| (*t, ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
        .collect();
    let vector = |tokens: &[&str]| -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            if idf.contains_key(t) {
                *tf.entry(t).or_default() += 1;
            }
        }
        let raw: Vec<(&str, f64)> = tf.iter().map(|(t, &c)| (*t, c as f64 * idf[t])).collect();
        let norm = raw.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return BTreeMap::new();
        }
        raw.into_iter().map(|(t, w)| (t.to_string(), w / norm)).collect()
    };
    let q_tokens: Vec<&str> = query.split_whitespace().collect();
    let q = vector(&q_tokens);
    let scores = pool
        .iter()
        .zip(&docs)
        .map(|(d, tokens)| {
            let v = vector(tokens);
            let s: f64 = q.iter().filter_map(|(t, w)| v.get(t).map(|x| w * x)).sum();
            (d.id.clone(), s)
        })
        .collect();
    order_by_score(scores)
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

/// Full-sort ranking by dot product of unit vectors.
pub fn dense_oracle(vectors: &[(String, Vec<f64>)], query: &[f64]) -> Vec<(String, f64)> {
    let q = unit(query);
    let scores = vectors
        .iter()
        .map(|(id, v)| {
            let v = unit(v);
            (id.clone(), q.iter().zip(&v).map(|(a, b)| a * b).sum())
        })
        .collect();
    order_by_score(scores)
}

pub fn random_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

/// A refract assembly case: selected demos, per-demo verdicts and options.
pub struct RefractCase {
    pub selected: Vec<ScoredDemo>,
    pub records: HashMap<String, ZeroShotRecord>,
    pub options: RefractOptions,
}

pub fn random_refract_case(rng: &mut impl Rng) -> RefractCase {
    let pool_size = rng.random_range(0..40);
    let mut ids: Vec<String> = (0..pool_size).map(|i| format!("d{i:02}")).collect();
    ids.shuffle(rng);
    let k = if pool_size == 0 {
        0
    } else {
        rng.random_range(0..=pool_size)
    };
    let selected: Vec<ScoredDemo> = ids[..k]
        .iter()
        .enumerate()
        .map(|(rank, id)| ScoredDemo {
            demo: demo(id.clone(), format!("text {id}"), "a"),
            score: 1.0 - rank as f64 / 100.0,
            retriever: RetrieverKind::Tfidf,
            rank,
        })
        .collect();
    let records = ids
        .iter()
        .map(|id| {
            let challenging = rng.random_bool(0.4);
            // coarse scores so judge-score ties happen
            let judge_score = if challenging {
                rng.random_range(0..5) as f64 / 10.0
            } else {
                1.0
            };
            let r = ZeroShotRecord {
                demo_id: id.clone(),
                prediction: format!("z {id}"),
                model_id: "m".into(),
                template_hash: "0".repeat(64),
                challenging,
                judge_score,
            };
            (id.clone(), r)
        })
        .collect();
    let options = RefractOptions {
        repeat_challenging: rng.random_bool(0.7),
        include_zero_shot: rng.random_bool(0.7),
        max_repeats: if rng.random_bool(0.5) {
            Some(rng.random_range(0..8))
        } else {
            None
        },
        ..RefractOptions::default()
    };
    RefractCase {
        selected,
        records,
        options,
    }
}

/// Every structural rule an assembled context must satisfy for its case.
/// Returns a description of the first violation.
pub fn check_refract_structure(case: &RefractCase, ctx: &IclContext) -> Result<(), String> {
    let sel = &case.selected;
    let originals: Vec<&ContextEntry> = ctx.entries.iter().filter(|e| !e.is_repeat).collect();
    let repeats: Vec<&ContextEntry> = ctx.entries.iter().filter(|e| e.is_repeat).collect();

    if let Some(pos) = ctx.entries.iter().position(|e| e.is_repeat) {
        if ctx.entries[pos..].iter().any(|e| !e.is_repeat) {
            return Err("original after a repeat".into());
        }
    }
    let orig_ids: Vec<&str> = originals.iter().map(|e| e.demo.id.as_str()).collect();
    let sel_ids: Vec<&str> = sel.iter().map(|s| s.demo.id.as_str()).collect();
    if orig_ids != sel_ids {
        return Err(format!("originals {orig_ids:?} differ from selection {sel_ids:?}"));
    }

    let position: HashMap<&str, usize> = sel_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut hard: Vec<&str> = sel_ids
        .iter()
        .copied()
        .filter(|id| case.records[*id].challenging)
        .collect();
    let expected_repeats: Vec<&str> = if !case.options.repeat_challenging {
        Vec::new()
    } else {
        if let Some(cap) = case.options.max_repeats {
            if hard.len() > cap {
                let mut ranked = hard.clone();
                ranked.sort_by(|a, b| {
                    case.records[*a]
                        .judge_score
                        .total_cmp(&case.records[*b].judge_score)
                        .then(position[a].cmp(&position[b]))
                });
                let keep: HashSet<&str> = ranked.into_iter().take(cap).collect();
                hard.retain(|id| keep.contains(id));
            }
        }
        hard
    };
    let repeat_ids: Vec<&str> = repeats.iter().map(|e| e.demo.id.as_str()).collect();
    if repeat_ids != expected_repeats {
        return Err(format!("repeats {repeat_ids:?}, expected {expected_repeats:?}"));
    }

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for e in &ctx.entries {
        *counts.entry(e.demo.id.as_str()).or_default() += 1;
    }
    for id in &sel_ids {
        let want = if expected_repeats.contains(id) { 2 } else { 1 };
        if counts[id] != want {
            return Err(format!("{id} appears {} times, expected {want}", counts[id]));
        }
        if !case.records[*id].challenging && counts[id] != 1 {
            return Err(format!("non-challenging {id} repeated"));
        }
    }
    for e in &ctx.entries {
        let want = case
            .options
            .include_zero_shot
            .then(|| case.records[&e.demo.id].prediction.clone());
        if e.zero_shot != want {
            return Err(format!(
                "{} carries zero-shot {:?}, expected {want:?}",
                e.demo.id, e.zero_shot
            ));
        }
    }
    ctx.validate().map_err(|v| v.to_string())
}

/// Random context that satisfies the structural invariants: distinct
/// originals, then repeats of some challenging ones.
pub fn random_context(rng: &mut impl Rng) -> IclContext {
    let n = rng.random_range(0..25);
    let words = [
        "flight",
        "fare",
        "boston",
        "日本語",
        "the",
        "a",
        "ticket",
        "{input}",
        "weather",
    ];
    let mut originals: Vec<ContextEntry> = (0..n)
        .map(|i| {
            let len = rng.random_range(0..12);
            let input: Vec<&str> = (0..len).map(|_| *words.choose(rng).unwrap()).collect();
            let challenging = rng.random_bool(0.4);
            ContextEntry {
                demo: demo(format!("d{i:02}"), input.join(" "), "a"),
                zero_shot: rng.random_bool(0.7).then(|| "b".to_string()),
                is_repeat: false,
                score: rng.random_range(0..4) as f64 / 4.0,
                challenging,
                judge_score: Some(if challenging {
                    rng.random_range(0..3) as f64 / 3.0
                } else {
                    1.0
                }),
            }
        })
        .collect();
    let repeats: Vec<ContextEntry> = originals
        .iter()
        .filter(|e| e.challenging && rng.random_bool(0.8))
        .map(|e| ContextEntry {
            is_repeat: true,
            ..e.clone()
        })
        .collect();
    originals.extend(repeats);
    IclContext { entries: originals }
}
