//! Prompt rendering and token budgets.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::JsonEndpoint;
use crate::refract::{ContextEntry, IclContext};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {field} is missing placeholder {placeholder}")]
    TemplatePlaceholderMissing {
        field: &'static str,
        placeholder: &'static str,
    },
    #[error("token counter unavailable: {0}")]
    CounterUnavailable(String),
    #[error("budget of {available} tokens cannot hold even the zero-shot prompt ({needed} tokens)")]
    BudgetTooSmall { available: usize, needed: usize },
    #[error("invalid token budget: {0}")]
    InvalidBudget(String),
    #[error("template file {path}: {reason}")]
    TemplateFile { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub preamble: String,
    pub demo_block: String,
    pub query_block: String,
    pub separator: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            preamble: "Answer the last input in the same format as the examples.".into(),
            demo_block: "Input: {input}\nModel guess: {guess}\nOutput: {output}".into(),
            query_block: "Input: {input}\nModel guess: {guess}\nOutput:".into(),
            separator: "\n\n".into(),
        }
    }
}

impl PromptTemplate {
    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let err = |reason: String| PromptError::TemplateFile {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let template: Self = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for (field, text, placeholder) in [
            ("demo_block", &self.demo_block, "{input}"),
            ("demo_block", &self.demo_block, "{output}"),
            ("query_block", &self.query_block, "{input}"),
        ] {
            if !text.contains(placeholder) {
                return Err(PromptError::TemplatePlaceholderMissing { field, placeholder });
            }
        }
        Ok(())
    }

    pub fn renders_guess(&self) -> bool {
        self.demo_block.contains("{guess}")
    }

    /// SHA-256 hex over the four fields, each terminated by 0x1f.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for field in [&self.preamble, &self.demo_block, &self.query_block, &self.separator] {
            h.update(field.as_bytes());
            h.update([0x1f]);
        }
        hex::encode(h.finalize())
    }
}

pub fn template_hash(template: &PromptTemplate) -> String {
    template.hash()
}

/// The test input, optionally with the model's own zero-shot guess for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestInput<'a> {
    pub text: &'a str,
    pub guess: Option<&'a str>,
}

impl<'a> From<&'a str> for TestInput<'a> {
    fn from(text: &'a str) -> Self {
        Self { text, guess: None }
    }
}

impl<'a> From<&'a String> for TestInput<'a> {
    fn from(text: &'a String) -> Self {
        Self { text, guess: None }
    }
}

/// Substitute `{name}` placeholders in one left-to-right pass, so values
/// containing braces are never re-expanded. Lines holding `{guess}` are
/// dropped when there is no guess.
fn fill(block: &str, input: &str, guess: Option<&str>, output: Option<&str>) -> String {
    let mut out = String::with_capacity(block.len() + input.len());
    let mut first = true;
    for line in block.split('\n') {
        if guess.is_none() && line.contains("{guess}") {
            continue;
        }
        if !first {
            out.push('\n');
        }
        first = false;
        let mut rest = line;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open..];
            let value = [("{input}", Some(input)), ("{guess}", guess), ("{output}", output)]
                .into_iter()
                .find_map(|(name, v)| tail.starts_with(name).then_some((name.len(), v)));
            match value {
                Some((len, Some(v))) => {
                    out.push_str(v);
                    rest = &tail[len..];
                }
                _ => {
                    out.push('{');
                    rest = &tail[1..];
                }
            }
        }
        out.push_str(rest);
    }
    out
}

fn render_entry(entry: &ContextEntry, template: &PromptTemplate) -> String {
    fill(
        &template.demo_block,
        &entry.demo.input,
        entry.zero_shot.as_deref(),
        Some(&entry.demo.output_text()),
    )
}

/// Preamble, one demo block per entry, then the query block, joined by the
/// separator. An empty preamble is left out.
pub fn render_prompt<'a>(
    context: &IclContext,
    test_input: impl Into<TestInput<'a>>,
    template: &PromptTemplate,
) -> Result<String, PromptError> {
    template.validate()?;
    let query = test_input.into();
    let mut parts = Vec::with_capacity(context.len() + 2);
    if !template.preamble.is_empty() {
        parts.push(template.preamble.clone());
    }
    parts.extend(context.entries.iter().map(|e| render_entry(e, template)));
    parts.push(fill(&template.query_block, query.text, query.guess, None));
    Ok(parts.join(&template.separator))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenCounter {
    Whitespace,
    #[serde(rename = "chars_div_4")]
    CharsDiv4,
    External {
        endpoint: String,
    },
}

#[derive(Serialize)]
struct CountRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct CountResponse {
    tokens: usize,
}

pub fn count_tokens(text: &str, counter: &TokenCounter) -> Result<usize, PromptError> {
    match counter {
        TokenCounter::Whitespace => Ok(text.split_whitespace().count()),
        TokenCounter::CharsDiv4 => Ok(text.chars().count().div_ceil(4)),
        TokenCounter::External { endpoint } => {
            if text.is_empty() {
                return Ok(0);
            }
            let client = JsonEndpoint::new(endpoint.clone(), None, Duration::from_secs(60));
            client
                .post::<_, CountResponse>(&CountRequest { text })
                .map(|r| r.tokens)
                .map_err(|e| PromptError::CounterUnavailable(e.to_string()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub max_tokens: usize,
    pub reserve_output: usize,
    pub counter: TokenCounter,
}

impl TokenBudget {
    pub fn new(max_tokens: usize, reserve_output: usize, counter: TokenCounter) -> Self {
        Self {
            max_tokens,
            reserve_output,
            counter,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.reserve_output == 0 {
            return Err(PromptError::InvalidBudget("reserve_output must be positive".into()));
        }
        if self.reserve_output >= self.max_tokens {
            return Err(PromptError::InvalidBudget(format!(
                "reserve_output {} must be below max_tokens {}",
                self.reserve_output, self.max_tokens
            )));
        }
        Ok(())
    }

    /// Tokens available to the prompt.
    pub fn available(&self) -> usize {
        self.max_tokens.saturating_sub(self.reserve_output)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub context: IclContext,
    /// One demo id per removed entry, in removal order.
    pub dropped: Vec<String>,
    pub tokens: usize,
}

/// Removal steps in priority order. Each step is a set of entry positions;
/// dropping a challenging original takes its repeat along.
fn drop_order(context: &IclContext) -> Vec<Vec<usize>> {
    let entries = &context.entries;
    // lowest first; among equals the later position goes first
    let by = |key: &dyn Fn(&ContextEntry) -> f64, keep: &dyn Fn(&ContextEntry) -> bool| {
        let mut idx: Vec<usize> = (0..entries.len()).filter(|&i| keep(&entries[i])).collect();
        idx.sort_by(|&a, &b| key(&entries[a]).total_cmp(&key(&entries[b])).then(b.cmp(&a)));
        idx
    };
    let mut steps: Vec<Vec<usize>> = Vec::with_capacity(entries.len());
    for i in by(&|e| e.score, &|e| !e.is_repeat && !e.challenging) {
        steps.push(vec![i]);
    }
    for i in by(&|e| e.judge_score.unwrap_or(0.0), &|e| e.is_repeat) {
        steps.push(vec![i]);
    }
    for i in by(&|e| e.score, &|e| !e.is_repeat && e.challenging) {
        let id = &entries[i].demo.id;
        let mut step = vec![i];
        step.extend((0..entries.len()).filter(|&j| entries[j].is_repeat && &entries[j].demo.id == id));
        steps.push(step);
    }
    steps
}

fn without(context: &IclContext, steps: &[Vec<usize>]) -> (IclContext, Vec<String>) {
    let mut gone = vec![false; context.entries.len()];
    let mut dropped = Vec::new();
    for step in steps {
        for &i in step {
            if !gone[i] {
                gone[i] = true;
                dropped.push(context.entries[i].demo.id.clone());
            }
        }
    }
    let entries = context
        .entries
        .iter()
        .zip(&gone)
        .filter(|(_, g)| !**g)
        .map(|(e, _)| e.clone())
        .collect();
    (IclContext { entries }, dropped)
}

/// Drop context entries until the rendered prompt fits the budget.
///
/// Entries go in a fixed priority: non-challenging originals by ascending
/// retrieval score, then repeats by ascending judge score, then challenging
/// originals by ascending score together with their repeats. The smallest
/// fitting prefix of that order is found by bisection and verified.
pub fn fit_to_budget<'a>(
    context: &IclContext,
    test_input: impl Into<TestInput<'a>>,
    template: &PromptTemplate,
    budget: &TokenBudget,
) -> Result<Fitted, PromptError> {
    budget.validate()?;
    let query = test_input.into();
    let available = budget.available();
    let measure = |ctx: &IclContext| -> Result<usize, PromptError> {
        count_tokens(&render_prompt(ctx, query, template)?, &budget.counter)
    };

    let tokens = measure(context)?;
    if tokens <= available {
        return Ok(Fitted {
            context: context.clone(),
            dropped: Vec::new(),
            tokens,
        });
    }
    let needed = measure(&IclContext::default())?;
    if needed > available {
        return Err(PromptError::BudgetTooSmall { available, needed });
    }

    let steps = drop_order(context);
    // invariant: prefix `hi` fits, prefix `lo` does not
    let (mut lo, mut hi) = (0, steps.len());
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if measure(&without(context, &steps[..mid]).0)? <= available {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (fitted, dropped) = without(context, &steps[..hi]);
    let tokens = measure(&fitted)?;
    debug_assert!(tokens <= available);
    Ok(Fitted {
        context: fitted,
        dropped,
        tokens,
    })
}
