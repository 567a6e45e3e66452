//! Task metrics on a 0–1 scale and delta-from-zero-shot tables.

mod bleu;
mod classification;
mod delta;
mod span;

pub use bleu::{corpus_bleu, sentence_bleu, BleuStats, Smoothing};
pub use classification::{accuracy, f1_macro, f1_multilabel};
pub use delta::{delta_table, format_delta, CellRun, DeltaCell, DeltaTable};
pub use span::{span_f1, SpanCounts};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Metric;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassScore {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            precision,
            recall,
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }
}

pub(crate) fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metric: Metric,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<BTreeMap<String, ClassScore>>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("{preds} predictions for {golds} gold answers")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no examples to score")]
    Empty,
}

pub(crate) fn check_lengths(preds: usize, golds: usize) -> Result<(), MetricError> {
    if preds != golds {
        return Err(MetricError::LengthMismatch { preds, golds });
    }
    if golds == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}
