use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{check_lengths, ClassScore, MetricError, ScoreReport};
use crate::dataset::{Metric, Span};

/// Exact-match span counts, mergeable across shards.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub per_label: BTreeMap<String, (usize, usize, usize)>,
}

impl SpanCounts {
    pub fn add(&mut self, pred: &[Span], gold: &[Span]) {
        let p: HashSet<&Span> = pred.iter().collect();
        let g: HashSet<&Span> = gold.iter().collect();
        for s in &p {
            let c = self.per_label.entry(s.label.clone()).or_default();
            if g.contains(s) {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
        for s in g.difference(&p) {
            self.per_label.entry(s.label.clone()).or_default().2 += 1;
        }
    }

    pub fn merge(&mut self, other: &SpanCounts) {
        for (l, (tp, fp, fn_)) in &other.per_label {
            let c = self.per_label.entry(l.clone()).or_default();
            c.0 += tp;
            c.1 += fp;
            c.2 += fn_;
        }
    }

    pub fn totals(&self) -> (usize, usize, usize) {
        self.per_label
            .values()
            .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2))
    }

    /// Micro F1. With no spans on either side the prediction is perfect.
    pub fn f1(&self) -> f64 {
        let (tp, fp, fn_) = self.totals();
        if tp + fp + fn_ == 0 {
            return 1.0;
        }
        ClassScore::from_counts(tp, fp, fn_).f1
    }
}

/// Micro precision/recall/F1 over exact `(start, end, label)` matches.
pub fn span_f1(pred_spans: &[Vec<Span>], gold_spans: &[Vec<Span>]) -> Result<ScoreReport, MetricError> {
    check_lengths(pred_spans.len(), gold_spans.len())?;
    let mut counts = SpanCounts::default();
    for (p, g) in pred_spans.iter().zip(gold_spans) {
        counts.add(p, g);
    }
    let per_class = counts
        .per_label
        .iter()
        .map(|(l, &(tp, fp, fn_))| (l.clone(), ClassScore::from_counts(tp, fp, fn_)))
        .collect();
    Ok(ScoreReport {
        metric: Metric::SpanF1,
        value: counts.f1(),
        per_class: Some(per_class),
        support: gold_spans.len(),
    })
}
