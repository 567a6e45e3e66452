use std::collections::{HashMap, VecDeque};

use super::ScoredDemo;
use crate::dataset::{class_order, TaskSpec};

/// Class-balanced selection of `k` demonstrations from a full ranking.
///
/// Classes are visited round robin in label-inventory order (keys outside the
/// inventory follow, sorted); each visit takes that class's best remaining
/// demonstration. Exhausted classes are skipped. The selection is returned in
/// its original ranking order with ranks renumbered.
pub fn balance_classes(ranked: Vec<ScoredDemo>, k: usize, task: &TaskSpec) -> Vec<ScoredDemo> {
    let pool: Vec<_> = ranked.iter().map(|s| s.demo.clone()).collect();
    let order = class_order(task, &pool);

    let mut queues: HashMap<&str, VecDeque<usize>> = HashMap::new();
    for (pos, s) in ranked.iter().enumerate() {
        queues.entry(s.demo.label_key.as_str()).or_default().push_back(pos);
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(k.min(ranked.len()));
    'outer: while chosen.len() < k {
        let mut progressed = false;
        for class in &order {
            if chosen.len() == k {
                break 'outer;
            }
            if let Some(pos) = queues.get_mut(class.as_str()).and_then(VecDeque::pop_front) {
                chosen.push(pos);
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    chosen.sort_unstable();

    let mut ranked: Vec<Option<ScoredDemo>> = ranked.into_iter().map(Some).collect();
    chosen
        .into_iter()
        .enumerate()
        .map(|(rank, pos)| {
            let mut s = ranked[pos].take().expect("positions are distinct");
            s.rank = rank;
            s
        })
        .collect()
}
