use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{finish, RetrievalError, RetrievalRequest, Retrieved, RetrieverKind, ScoredDemo};
use crate::dataset::{Demonstration, TaskSpec};

/// Forward Fisher–Yates over the pool sorted by id. Any prefix of the result
/// equals the partial shuffle of that length, so truncating to `k` samples
/// `k` distinct demonstrations.
pub fn shuffle_pool(pool: &[Demonstration], seed: u64) -> Vec<ScoredDemo> {
    let mut order: Vec<&Demonstration> = pool.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = order.len();
    for i in 0..n.saturating_sub(1) {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    order
        .into_iter()
        .enumerate()
        .map(|(rank, d)| ScoredDemo {
            demo: d.clone(),
            score: 0.0,
            retriever: RetrieverKind::Random,
            rank,
        })
        .collect()
}

pub fn retrieve_random(
    pool: &[Demonstration],
    request: &RetrievalRequest,
    task: &TaskSpec,
) -> Result<Retrieved, RetrievalError> {
    finish(shuffle_pool(pool, request.seed), request, task)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Metric, Output, TaskKind};
    use std::collections::BTreeSet;

    fn pool(n: usize) -> Vec<Demonstration> {
        (0..n)
            .map(|i| Demonstration::new(format!("d{i:03}"), format!("text {i}"), Output::Label("x".into())))
            .collect()
    }

    fn task() -> TaskSpec {
        TaskSpec {
            name: "t".into(),
            kind: TaskKind::Multiclass,
            labels: vec!["x".into()],
            metric: Metric::Accuracy,
            language: "en".into(),
        }
    }

    #[test]
    fn deterministic_for_same_seed() {
        let p = pool(30);
        let req = RetrievalRequest::new("", 10).seed(42);
        assert_eq!(retrieve_random(&p, &req, &task()), retrieve_random(&p, &req, &task()));
    }

    #[test]
    fn input_order_does_not_matter() {
        let p = pool(30);
        let mut rev = p.clone();
        rev.reverse();
        let req = RetrievalRequest::new("", 10).seed(9);
        assert_eq!(
            retrieve_random(&p, &req, &task()).unwrap().ids(),
            retrieve_random(&rev, &req, &task()).unwrap().ids()
        );
    }

    #[test]
    fn full_k_is_a_permutation() {
        let p = pool(25);
        let got = retrieve_random(&p, &RetrievalRequest::new("", 25).seed(3), &task()).unwrap();
        let ids: BTreeSet<&str> = got.ids().into_iter().collect();
        assert_eq!(ids.len(), 25);
        assert!(got.demos.iter().all(|d| d.score == 0.0));
        assert!(got.demos.iter().enumerate().all(|(i, d)| d.rank == i));
    }

    #[test]
    fn different_seeds_differ() {
        // pinned seed pairs on a 100-doc pool
        let p = pool(100);
        for (a, b) in [(0u64, 1u64), (42, 43), (7, 1_000_003)] {
            let ra = retrieve_random(&p, &RetrievalRequest::new("", 10).seed(a), &task()).unwrap();
            let rb = retrieve_random(&p, &RetrievalRequest::new("", 10).seed(b), &task()).unwrap();
            assert_ne!(ra.ids(), rb.ids(), "seeds {a} and {b}");
        }
    }

    #[test]
    fn prefix_property() {
        let p = pool(40);
        let full = shuffle_pool(&p, 11);
        let top = retrieve_random(&p, &RetrievalRequest::new("", 7).seed(11), &task()).unwrap();
        assert_eq!(top.demos, full[..7].to_vec());
    }
}
