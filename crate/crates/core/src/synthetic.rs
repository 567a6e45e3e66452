//! Clustered synthetic classification data for offline experiments.
//!
//! Each class owns a few topic clusters, each cluster a small vocabulary.
//! A text mixes words from one cluster with shared filler words, so lexical
//! similarity tracks cluster membership and, through it, the label.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, DatasetError, Demonstration, Metric, Output, TaskKind, TaskSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub pool_size: usize,
    pub test_size: usize,
    pub classes: usize,
    pub clusters_per_class: usize,
    pub cluster_vocab: usize,
    pub filler_vocab: usize,
    pub topic_words: usize,
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            pool_size: 500,
            test_size: 100,
            classes: 4,
            clusters_per_class: 5,
            cluster_vocab: 12,
            filler_vocab: 300,
            topic_words: 6,
            filler_words: 6,
            seed: 0,
        }
    }
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// A pronounceable nonsense word, unique per `n`.
fn word(mut n: usize) -> String {
    let mut w = String::new();
    loop {
        w.push_str(ONSETS[n % ONSETS.len()]);
        n /= ONSETS.len();
        w.push_str(VOWELS[n % VOWELS.len()]);
        n /= VOWELS.len();
        if n == 0 {
            break;
        }
        n -= 1;
    }
    w
}

pub fn synthetic_task(classes: usize) -> TaskSpec {
    TaskSpec {
        name: "synthetic_topics".into(),
        kind: TaskKind::Multiclass,
        labels: (0..classes).map(|c| format!("topic {c}")).collect(),
        metric: Metric::Accuracy,
        language: "en".into(),
    }
}

pub fn synthetic_dataset(cfg: &SyntheticConfig) -> Result<Dataset, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let task = synthetic_task(cfg.classes);
    let n_clusters = cfg.classes * cfg.clusters_per_class;
    let vocab: Vec<Vec<String>> = (0..n_clusters)
        .map(|c| {
            (0..cfg.cluster_vocab)
                .map(|i| word(c * cfg.cluster_vocab + i))
                .collect()
        })
        .collect();
    let filler: Vec<String> = (0..cfg.filler_vocab)
        .map(|i| word(n_clusters * cfg.cluster_vocab + i))
        .collect();

    let mut make = |prefix: &str, i: usize| {
        let cluster = rng.random_range(0..n_clusters);
        let mut words: Vec<&str> = (0..cfg.topic_words)
            .map(|_| vocab[cluster].choose(&mut rng).expect("cluster vocab").as_str())
            .collect();
        words.extend((0..cfg.filler_words).map(|_| filler.choose(&mut rng).expect("filler vocab").as_str()));
        for j in (1..words.len()).rev() {
            words.swap(j, rng.random_range(0..=j));
        }
        let label = task.labels[cluster / cfg.clusters_per_class].clone();
        Demonstration::new(format!("{prefix}{i:05}"), words.join(" "), Output::Label(label))
    };
    let pool: Vec<Demonstration> = (0..cfg.pool_size).map(|i| make("p", i)).collect();
    let test: Vec<Demonstration> = (0..cfg.test_size).map(|i| make("t", i)).collect();
    Dataset::new(task, pool, test)
}
