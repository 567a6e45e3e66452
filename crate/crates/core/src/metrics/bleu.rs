use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{MetricError, ScoreReport};
use crate::dataset::Metric;
use crate::tokenize::{tokenize, TokenizerConfig};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    None,
    /// `(m + 1) / (t + 1)` for orders two and up; unigrams stay raw.
    AddOneHigherOrders,
}

/// Sufficient statistics for BLEU: clipped matches and hypothesis n-gram
/// totals per order, plus hypothesis and reference lengths. Shards merge by
/// addition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

impl BleuStats {
    pub fn add_tokens(&mut self, hyp: &[String], reference: &[String]) {
        self.hyp_len += hyp.len();
        self.ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            self.totals[n - 1] += hyp.len().saturating_sub(n - 1);
            self.matches[n - 1] += h
                .iter()
                .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }

    pub fn add(&mut self, hyp: &str, reference: &str) {
        let cfg = TokenizerConfig::cased();
        self.add_tokens(&tokenize(hyp, cfg), &tokenize(reference, cfg));
    }

    pub fn merge(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Geometric mean of orders `1..=max_order` times the brevity penalty
    /// `min(1, exp(1 - r/c))`. Orders beyond the longest hypothesis n-gram
    /// present are left out of the mean.
    pub fn score(&self, max_order: usize, smoothing: Smoothing) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let order = (1..=max_order.min(MAX_ORDER))
            .rev()
            .find(|&n| self.totals[n - 1] > 0)
            .unwrap_or(1);
        let mut log_sum = 0.0;
        for n in 1..=order {
            let (m, t) = (self.matches[n - 1] as f64, self.totals[n - 1] as f64);
            let p = match smoothing {
                Smoothing::AddOneHigherOrders if n >= 2 => (m + 1.0) / (t + 1.0),
                _ => m / t,
            };
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln();
        }
        let bp = (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp().min(1.0);
        bp * (log_sum / order as f64).exp()
    }
}

pub fn corpus_bleu<S: AsRef<str>>(
    hyps: &[S],
    refs: &[S],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<ScoreReport, MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch {
            preds: hyps.len(),
            golds: refs.len(),
        });
    }
    let mut stats = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        stats.add(h.as_ref(), r.as_ref());
    }
    Ok(ScoreReport {
        metric: Metric::CorpusBleu,
        value: stats.score(max_n, smoothing),
        per_class: None,
        support: hyps.len(),
    })
}

/// Single-pair BLEU with add-one smoothing on orders two and up, order capped
/// at `min(4, |hyp|)`.
pub fn sentence_bleu(hyp: &str, reference: &str) -> f64 {
    let mut stats = BleuStats::default();
    stats.add(hyp, reference);
    stats.score(MAX_ORDER, Smoothing::AddOneHigherOrders)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_corpus_is_exactly_one() {
        let s = ["the cat sat on the mat", "a b"];
        assert_eq!(corpus_bleu(&s, &s, 4, Smoothing::None).unwrap().value, 1.0);
    }

    #[test]
    fn empty_corpus_is_zero() {
        let none: [&str; 0] = [];
        assert_eq!(corpus_bleu(&none, &none, 4, Smoothing::None).unwrap().value, 0.0);
        assert_eq!(corpus_bleu(&[""], &["a b c"], 4, Smoothing::None).unwrap().value, 0.0);
    }

    #[test]
    fn hand_computed_pair() {
        // hyp: the cat the cat on mat (6) ref: the cat sat on the mat (6)
        // p1 = 5/6 (the x2 clipped to 2, cat 1, on, mat) ; p2: the-cat(1), cat-the(0), the-cat(clip) , cat-on(0), on-mat(0) -> 1/5
        // p3: 0 -> BLEU 0 unsmoothed
        let v = corpus_bleu(
            &["the cat the cat on mat"],
            &["the cat sat on the mat"],
            4,
            Smoothing::None,
        )
        .unwrap()
        .value;
        assert_eq!(v, 0.0);
        let v2 = corpus_bleu(
            &["the cat the cat on mat"],
            &["the cat sat on the mat"],
            2,
            Smoothing::None,
        )
        .unwrap()
        .value;
        assert_abs_diff_eq!(v2, (5.0f64 / 6.0 * 1.0 / 5.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn brevity_penalty() {
        // hyp 2 tokens, ref 4 tokens, unigram only: p1 = 1, BP = e^(1-2)
        let v = corpus_bleu(&["a b"], &["a b c d"], 1, Smoothing::None).unwrap().value;
        assert_abs_diff_eq!(v, (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn sentence_level_cases() {
        assert_eq!(sentence_bleu("hello there world", "hello there world"), 1.0);
        assert_eq!(sentence_bleu("x y", "a b"), 0.0);
        assert_eq!(sentence_bleu("hallo", "hallo"), 1.0);
        assert_eq!(sentence_bleu("", "hallo"), 0.0);
        let partial = sentence_bleu("the cat sat on a mat", "the cat sat on the mat");
        assert!(partial > 0.3 && partial < 1.0, "{partial}");
    }

    #[test]
    fn corpus_matches_unsmoothed_sentence_on_one_pair() {
        let (h, r) = ("the cat sat on the red mat", "the cat sat on the mat");
        let mut stats = BleuStats::default();
        stats.add(h, r);
        assert!(stats.matches.iter().all(|&m| m > 0));
        assert_eq!(
            corpus_bleu(&[h], &[r], 4, Smoothing::None).unwrap().value,
            stats.score(4, Smoothing::None)
        );
    }
}
