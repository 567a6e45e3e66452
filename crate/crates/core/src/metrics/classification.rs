use std::collections::{BTreeMap, BTreeSet};

use super::{check_lengths, ClassScore, MetricError, ScoreReport};
use crate::dataset::{normalize_label, Metric};

pub fn accuracy<S: AsRef<str>>(preds: &[S], golds: &[S]) -> Result<ScoreReport, MetricError> {
    check_lengths(preds.len(), golds.len())?;
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| normalize_label(p.as_ref()) == normalize_label(g.as_ref()))
        .count();
    Ok(ScoreReport {
        metric: Metric::Accuracy,
        value: hits as f64 / golds.len() as f64,
        per_class: None,
        support: golds.len(),
    })
}

/// Unweighted mean of per-class F1 over `labels`. A class with neither gold
/// nor predicted instances scores 0 and still counts in the mean.
pub fn f1_macro<S: AsRef<str>>(preds: &[S], golds: &[S], labels: &[S]) -> Result<ScoreReport, MetricError> {
    check_lengths(preds.len(), golds.len())?;
    if labels.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut per_class = BTreeMap::new();
    let mut sum = 0.0;
    for label in labels {
        let l = normalize_label(label.as_ref());
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (p, g) in preds.iter().zip(golds) {
            let (p_is, g_is) = (normalize_label(p.as_ref()) == l, normalize_label(g.as_ref()) == l);
            match (p_is, g_is) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let score = ClassScore::from_counts(tp, fp, fn_);
        sum += score.f1;
        per_class.insert(label.as_ref().to_string(), score);
    }
    Ok(ScoreReport {
        metric: Metric::F1Macro,
        value: sum / labels.len() as f64,
        per_class: Some(per_class),
        support: golds.len(),
    })
}

/// Example-averaged F1 between predicted and gold label sets; two empty sets
/// agree perfectly. Per-label scores pool counts over all examples.
pub fn f1_multilabel<S: AsRef<str>>(preds: &[Vec<S>], golds: &[Vec<S>]) -> Result<ScoreReport, MetricError> {
    check_lengths(preds.len(), golds.len())?;
    let norm = |v: &Vec<S>| -> BTreeSet<String> { v.iter().map(|s| normalize_label(s.as_ref())).collect() };
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let mut sum = 0.0;
    for (p, g) in preds.iter().zip(golds) {
        let (p, g) = (norm(p), norm(g));
        let inter = p.intersection(&g).count();
        sum += if p.is_empty() && g.is_empty() {
            1.0
        } else {
            2.0 * inter as f64 / (p.len() + g.len()) as f64
        };
        for l in p.union(&g) {
            let c = counts.entry(l.clone()).or_default();
            match (p.contains(l), g.contains(l)) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                _ => c.2 += 1,
            }
        }
    }
    let per_class = counts
        .into_iter()
        .map(|(l, (tp, fp, fn_))| (l, ClassScore::from_counts(tp, fp, fn_)))
        .collect();
    Ok(ScoreReport {
        metric: Metric::F1Multilabel,
        value: sum / golds.len() as f64,
        per_class: Some(per_class),
        support: golds.len(),
    })
}
