//! Zero-shot error signals and challenging-example repetition.
//!
//! The pool is first answered zero-shot by the model. Demonstrations it gets
//! wrong (per task kind, see [`judge_challenging`]) are challenging. The
//! assembled context lists the selected demonstrations in order, each with its
//! zero-shot answer, then repeats the challenging ones at the end:
//!
//! ```text
//! d1 z1  d2 z2  d3 z3  ...  dn zn  d'1 z'1  d'2 z'2 ...
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{normalize_label, parse_prediction, Demonstration, Output, TaskSpec};
use crate::metrics::{sentence_bleu, SpanCounts};
use crate::model::{CachedModel, GenerationRequest, MockProbe, ModelError};
use crate::prompt::{render_prompt, PromptError, PromptTemplate};
use crate::retrieval::ScoredDemo;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotRecord {
    pub demo_id: String,
    pub prediction: String,
    pub model_id: String,
    pub template_hash: String,
    pub challenging: bool,
    pub judge_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefractOptions {
    pub repeat_challenging: bool,
    pub include_zero_shot: bool,
    /// Cap on how many challenging demonstrations are repeated; `None` is
    /// unlimited.
    pub max_repeats: Option<usize>,
    pub mt_bleu_threshold: f64,
    pub seq_f1_threshold: f64,
    /// Also show the model's own zero-shot guess for the test input.
    pub test_zero_shot: bool,
}

impl Default for RefractOptions {
    fn default() -> Self {
        Self {
            repeat_challenging: true,
            include_zero_shot: true,
            max_repeats: None,
            mt_bleu_threshold: 0.5,
            seq_f1_threshold: 1.0,
            test_zero_shot: false,
        }
    }
}

impl RefractOptions {
    pub fn validate(&self) -> Result<(), RefractError> {
        for (name, v) in [
            ("mt_bleu_threshold", self.mt_bleu_threshold),
            ("seq_f1_threshold", self.seq_f1_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(RefractError::InvalidOptions(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RefractError {
    #[error("no zero-shot record for demonstration {0:?}")]
    MissingRecord(String),
    #[error("demonstration {0:?} selected twice")]
    DuplicateSelection(String),
    #[error("invalid refract options: {0}")]
    InvalidOptions(String),
    #[error("zero-shot annotation of {demo_id:?} failed: {source}")]
    Model {
        demo_id: String,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("records file {path}: {reason}")]
    Records { path: String, reason: String },
}

/// One context slot. `score` is the retrieval score; `judge_score` and
/// `challenging` come from the zero-shot pass when there was one.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEntry {
    pub demo: Demonstration,
    pub zero_shot: Option<String>,
    pub is_repeat: bool,
    pub score: f64,
    pub challenging: bool,
    pub judge_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IclContext {
    pub entries: Vec<ContextEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContextViolation {
    #[error("original entry {0:?} follows a repeat")]
    OriginalAfterRepeat(String),
    #[error("repeat of {0:?} has no original")]
    OrphanRepeat(String),
    #[error("demonstration {0:?} appears more than twice")]
    TooManyOccurrences(String),
    #[error("demonstration {0:?} appears twice among originals")]
    DuplicateOriginal(String),
}

impl IclContext {
    /// A context without zero-shot signals, in selection order.
    pub fn plain(selected: &[ScoredDemo]) -> Self {
        Self {
            entries: selected
                .iter()
                .map(|s| ContextEntry {
                    demo: s.demo.clone(),
                    zero_shot: None,
                    is_repeat: false,
                    score: s.score,
                    challenging: false,
                    judge_score: None,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn originals(&self) -> impl Iterator<Item = &ContextEntry> {
        self.entries.iter().filter(|e| !e.is_repeat)
    }

    pub fn repeats(&self) -> impl Iterator<Item = &ContextEntry> {
        self.entries.iter().filter(|e| e.is_repeat)
    }

    pub fn validate(&self) -> Result<(), ContextViolation> {
        let mut seen_repeat = false;
        let mut originals = HashSet::new();
        let mut repeated = HashSet::new();
        for e in &self.entries {
            let id = e.demo.id.as_str();
            if e.is_repeat {
                seen_repeat = true;
                if !originals.contains(id) {
                    return Err(ContextViolation::OrphanRepeat(id.to_string()));
                }
                if !repeated.insert(id) {
                    return Err(ContextViolation::TooManyOccurrences(id.to_string()));
                }
            } else {
                if seen_repeat {
                    return Err(ContextViolation::OriginalAfterRepeat(id.to_string()));
                }
                if !originals.insert(id) {
                    return Err(ContextViolation::DuplicateOriginal(id.to_string()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Judgement {
    pub challenging: bool,
    pub judge_score: f64,
}

/// Whether the zero-shot `prediction` for `demo` counts as a failure.
///
/// Label tasks compare normalized labels (score 0 or 1), multilabel tasks
/// compare sets, sequence labeling uses per-example span F1 against
/// `seq_f1_threshold`, translation uses sentence BLEU against
/// `mt_bleu_threshold`. An unparseable prediction is challenging with
/// score 0.
pub fn judge_challenging(
    prediction: &str,
    demo: &Demonstration,
    task: &TaskSpec,
    options: &RefractOptions,
) -> Judgement {
    let fail = Judgement {
        challenging: true,
        judge_score: 0.0,
    };
    let Ok(parsed) = parse_prediction(prediction, &demo.input, task) else {
        return fail;
    };
    let (score, threshold) = match (&parsed, &demo.output) {
        (Output::Label(p), Output::Label(g)) => (f64::from(normalize_label(p) == normalize_label(g)), 1.0),
        (Output::Labels(p), Output::Labels(g)) => {
            let p: HashSet<String> = p.iter().map(|s| normalize_label(s)).collect();
            let g: HashSet<String> = g.iter().map(|s| normalize_label(s)).collect();
            (f64::from(p == g), 1.0)
        }
        (Output::Spans(p), Output::Spans(g)) => {
            let mut counts = SpanCounts::default();
            counts.add(p, g);
            (counts.f1(), options.seq_f1_threshold)
        }
        (Output::Text(p), Output::Text(g)) => (sentence_bleu(p, g), options.mt_bleu_threshold),
        _ => return fail,
    };
    Judgement {
        challenging: score < threshold,
        judge_score: score,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotateSettings {
    pub max_inflight: usize,
    pub partial_ok: bool,
    pub max_output_tokens: usize,
    pub stop: Vec<String>,
}

impl Default for AnnotateSettings {
    fn default() -> Self {
        Self {
            max_inflight: 4,
            partial_ok: false,
            max_output_tokens: 64,
            stop: Vec::new(),
        }
    }
}

/// Zero-shot prompt for one input, with the mock probe when the client
/// wants it.
pub fn zero_shot_prompt(
    demo: &Demonstration,
    task: &TaskSpec,
    template: &PromptTemplate,
    model: &CachedModel<'_>,
) -> Result<String, PromptError> {
    let prompt = render_prompt(&IclContext::default(), &demo.input, template)?;
    Ok(if model.wants_probe() {
        MockProbe::for_demo(demo, task).attach(&prompt)
    } else {
        prompt
    })
}

/// Answer every pool demonstration zero-shot and judge it.
///
/// Requests go through the cache first and run on up to
/// `settings.max_inflight` threads. Records come back in pool order. A
/// failed model call aborts unless `partial_ok`, in which case the demo gets
/// an empty prediction marked challenging with score 0.
pub fn zero_shot_annotate(
    pool: &[Demonstration],
    task: &TaskSpec,
    model: &CachedModel<'_>,
    template: &PromptTemplate,
    options: &RefractOptions,
    settings: &AnnotateSettings,
) -> Result<Vec<ZeroShotRecord>, RefractError> {
    options.validate()?;
    let template_hash = template.hash();
    let run = |demo: &Demonstration| -> Result<ZeroShotRecord, RefractError> {
        let prompt = zero_shot_prompt(demo, task, template, model)?;
        let mut request = GenerationRequest::new(prompt, settings.max_output_tokens);
        request.stop = settings.stop.clone();
        let (prediction, judgement) = match model.generate(&template_hash, &request) {
            Ok(text) => {
                let j = judge_challenging(&text, demo, task, options);
                (text, j)
            }
            Err(source) if settings.partial_ok => {
                log::warn!("zero-shot for {} failed: {source}", demo.id);
                (
                    String::new(),
                    Judgement {
                        challenging: true,
                        judge_score: 0.0,
                    },
                )
            }
            Err(source) => {
                return Err(RefractError::Model {
                    demo_id: demo.id.clone(),
                    source,
                })
            }
        };
        Ok(ZeroShotRecord {
            demo_id: demo.id.clone(),
            prediction,
            model_id: model.model_id().to_string(),
            template_hash: template_hash.clone(),
            challenging: judgement.challenging,
            judge_score: judgement.judge_score,
        })
    };
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.max_inflight.max(1))
        .build()
        .expect("thread pool");
    threads.install(|| pool.par_iter().map(run).collect())
}

/// Lay out the selected demonstrations with their zero-shot signals and the
/// repeated challenging block.
///
/// Originals keep selection order. When `repeat_challenging` is set, the
/// challenging ones follow again in the same relative order; if there are
/// more than `max_repeats`, the ones with the lowest judge score are kept.
pub fn assemble_refract_context(
    selected: &[ScoredDemo],
    records: &HashMap<String, ZeroShotRecord>,
    options: &RefractOptions,
) -> Result<IclContext, RefractError> {
    let mut seen = HashSet::new();
    let mut originals = Vec::with_capacity(selected.len());
    for s in selected {
        if !seen.insert(s.demo.id.as_str()) {
            return Err(RefractError::DuplicateSelection(s.demo.id.clone()));
        }
        let record = records
            .get(&s.demo.id)
            .ok_or_else(|| RefractError::MissingRecord(s.demo.id.clone()))?;
        originals.push(ContextEntry {
            demo: s.demo.clone(),
            zero_shot: options.include_zero_shot.then(|| record.prediction.clone()),
            is_repeat: false,
            score: s.score,
            challenging: record.challenging,
            judge_score: Some(record.judge_score),
        });
    }

    let mut repeats = Vec::new();
    if options.repeat_challenging {
        let mut hard: Vec<usize> = (0..originals.len()).filter(|&i| originals[i].challenging).collect();
        if let Some(cap) = options.max_repeats {
            if hard.len() > cap {
                let mut by_difficulty = hard.clone();
                by_difficulty.sort_by(|&a, &b| {
                    let (ja, jb) = (
                        originals[a].judge_score.unwrap_or(0.0),
                        originals[b].judge_score.unwrap_or(0.0),
                    );
                    ja.total_cmp(&jb).then(a.cmp(&b))
                });
                let keep: HashSet<usize> = by_difficulty.into_iter().take(cap).collect();
                hard.retain(|i| keep.contains(i));
            }
        }
        repeats = hard
            .into_iter()
            .map(|i| ContextEntry {
                is_repeat: true,
                ..originals[i].clone()
            })
            .collect();
    }
    originals.extend(repeats);
    Ok(IclContext { entries: originals })
}

pub fn write_records(path: &Path, records: &[ZeroShotRecord]) -> Result<(), RefractError> {
    let err = |e: std::io::Error| RefractError::Records {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(err)?);
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r).expect("record serializes")).map_err(err)?;
    }
    f.flush().map_err(err)
}

pub fn read_records(path: &Path) -> Result<Vec<ZeroShotRecord>, RefractError> {
    let err = |reason: String| RefractError::Records {
        path: path.display().to_string(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| err(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn records_by_id(records: Vec<ZeroShotRecord>) -> HashMap<String, ZeroShotRecord> {
    records.into_iter().map(|r| (r.demo_id.clone(), r)).collect()
}
