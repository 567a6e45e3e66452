//! Sentinel block that lets offline mocks answer without a real model.
//!
//! The harness appends one line, `<<mock-probe>>` followed by JSON, to the
//! end of a prompt when the client asks for it. The probe carries the gold
//! answer, wrong alternatives, and how similar each context demonstration is
//! to the query.

use serde::{Deserialize, Serialize};

use crate::dataset::{normalize_label, Demonstration, Output, TaskKind, TaskSpec, NONE};

const SENTINEL: &str = "\n<<mock-probe>>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockProbe {
    /// Identifies the question; mocks key their randomness on it.
    pub query: String,
    pub gold: String,
    pub alternatives: Vec<String>,
    /// Query similarity of each original context demonstration.
    #[serde(default)]
    pub context_similarities: Vec<f64>,
    /// Query similarity of each repeated demonstration.
    #[serde(default)]
    pub repeat_similarities: Vec<f64>,
}

impl MockProbe {
    pub fn for_demo(demo: &Demonstration, task: &TaskSpec) -> Self {
        Self {
            query: demo.input.clone(),
            gold: demo.output_text(),
            alternatives: wrong_answers(demo, task),
            context_similarities: Vec::new(),
            repeat_similarities: Vec::new(),
        }
    }

    pub fn with_similarities(mut self, originals: Vec<f64>, repeats: Vec<f64>) -> Self {
        self.context_similarities = originals;
        self.repeat_similarities = repeats;
        self
    }

    pub fn attach(&self, prompt: &str) -> String {
        format!(
            "{prompt}{SENTINEL}{}",
            serde_json::to_string(self).expect("probe serializes")
        )
    }

    pub fn extract(prompt: &str) -> Option<MockProbe> {
        let (_, json) = prompt.rsplit_once(SENTINEL)?;
        serde_json::from_str(json).ok()
    }
}

/// Answers that are certainly wrong for `demo`, in a fixed order.
pub fn wrong_answers(demo: &Demonstration, task: &TaskSpec) -> Vec<String> {
    match (&demo.output, task.kind) {
        (Output::Label(gold), _) => task
            .labels
            .iter()
            .filter(|l| normalize_label(l) != normalize_label(gold))
            .cloned()
            .collect(),
        (Output::Labels(gold), TaskKind::Multilabel) => {
            let mut out: Vec<String> = task
                .labels
                .iter()
                .filter(|l| !(gold.len() == 1 && &gold[0] == *l))
                .cloned()
                .collect();
            if !gold.is_empty() {
                out.push(NONE.to_string());
            }
            out
        }
        (Output::Spans(gold), _) => {
            if !gold.is_empty() {
                vec![NONE.to_string()]
            } else {
                match (demo.input.split_whitespace().next(), task.labels.first()) {
                    (Some(word), Some(label)) => vec![format!("{word} => {label}")],
                    _ => Vec::new(),
                }
            }
        }
        (Output::Text(_), _) => vec!["unknown".to_string()],
        _ => Vec::new(),
    }
}
