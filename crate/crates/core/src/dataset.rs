//! Task schema, demonstration records and the JSONL loader.
//!
//! Pool and test files hold one JSON object per line:
//!
//! ```text
//! {"id": "d1", "input": "...", "labels": ["..."], "output": <per kind>}
//! ```
//!
//! where `output` is a string for classification and translation tasks, a
//! list of strings for multilabel tasks, and a list of
//! `[start_char, end_char_exclusive, label]` triples for sequence labeling.
//! Offsets count Unicode scalar values, not bytes.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::ser::SerializeTuple;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Binary,
    Multiclass,
    Multilabel,
    Relation,
    Seqlabel,
    Mt,
}

impl TaskKind {
    /// Single-label classification kinds, judged by exact label match.
    pub fn is_single_label(self) -> bool {
        matches!(self, TaskKind::Binary | TaskKind::Multiclass | TaskKind::Relation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    F1Macro,
    F1Multilabel,
    SpanF1,
    CorpusBleu,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Metric::Accuracy => "accuracy",
            Metric::F1Macro => "f1_macro",
            Metric::F1Multilabel => "f1_multilabel",
            Metric::SpanF1 => "span_f1",
            Metric::CorpusBleu => "corpus_bleu",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub labels: Vec<String>,
    pub metric: Metric,
    pub language: String,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("task name is empty".into());
        }
        match (self.kind, self.labels.is_empty()) {
            (TaskKind::Mt, false) => return Err("translation tasks take no labels".into()),
            (TaskKind::Mt, true) => {}
            (_, true) => return Err(format!("{:?} task needs a label inventory", self.kind)),
            (_, false) => {}
        }
        if self.kind == TaskKind::Binary && self.labels.len() != 2 {
            return Err(format!("binary task needs exactly 2 labels, got {}", self.labels.len()));
        }
        let mut seen = HashSet::new();
        for label in &self.labels {
            if label.trim().is_empty() {
                return Err("empty label in inventory".into());
            }
            if !seen.insert(normalize_label(label)) {
                return Err(format!("duplicate label {label:?} (after normalization)"));
            }
        }
        let compatible = match self.kind {
            TaskKind::Mt => self.metric == Metric::CorpusBleu,
            TaskKind::Seqlabel => self.metric == Metric::SpanF1,
            TaskKind::Multilabel => self.metric == Metric::F1Multilabel,
            _ => matches!(self.metric, Metric::Accuracy | Metric::F1Macro),
        };
        if !compatible {
            return Err(format!("metric {} is not valid for {:?} tasks", self.metric, self.kind));
        }
        if !is_bcp47(&self.language) {
            return Err(format!("{:?} is not a BCP-47 language tag", self.language));
        }
        Ok(())
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    /// Map a free-form answer onto the inventory, comparing normalized forms.
    pub fn canonical_label(&self, answer: &str) -> Option<&str> {
        let wanted = normalize_label(answer);
        self.labels
            .iter()
            .find(|l| normalize_label(l) == wanted)
            .map(String::as_str)
    }
}

// Structural check only: 2-3 letter (or 4-8) primary subtag, alphanumeric subtags of 1-8.
fn is_bcp47(tag: &str) -> bool {
    let mut parts = tag.split('-');
    let primary = parts.next().unwrap_or("");
    if !(2..=8).contains(&primary.len()) || !primary.chars().all(|c| c.is_ascii_alphabetic()) {
        return false;
    }
    parts.all(|p| (1..=8).contains(&p.len()) && p.chars().all(|c| c.is_ascii_alphanumeric()))
}

/// Case-fold, trim and collapse internal whitespace.
pub fn normalize_label(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl Span {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }
}

impl Serialize for Span {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut t = serializer.serialize_tuple(3)?;
        t.serialize_element(&self.start)?;
        t.serialize_element(&self.end)?;
        t.serialize_element(&self.label)?;
        t.end()
    }
}

/// Gold answer of a demonstration. The variant is fixed by the task kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Output {
    Label(String),
    Labels(Vec<String>),
    Spans(Vec<Span>),
    Text(String),
}

impl Serialize for Output {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Output::Label(s) | Output::Text(s) => s.serialize(serializer),
            Output::Labels(v) => v.serialize(serializer),
            Output::Spans(v) => v.serialize(serializer),
        }
    }
}

impl Output {
    pub fn from_json(value: &Value, kind: TaskKind) -> Result<Self, String> {
        match kind {
            TaskKind::Binary | TaskKind::Multiclass | TaskKind::Relation => value
                .as_str()
                .map(|s| Output::Label(s.to_string()))
                .ok_or_else(|| "output must be a string".to_string()),
            TaskKind::Mt => value
                .as_str()
                .map(|s| Output::Text(s.to_string()))
                .ok_or_else(|| "output must be a string".to_string()),
            TaskKind::Multilabel => serde_json::from_value::<Vec<String>>(value.clone())
                .map(Output::Labels)
                .map_err(|_| "output must be a list of label strings".to_string()),
            TaskKind::Seqlabel => {
                let triples = serde_json::from_value::<Vec<(usize, usize, String)>>(value.clone())
                    .map_err(|_| "output must be a list of [start, end, label] triples".to_string())?;
                Ok(Output::Spans(
                    triples.into_iter().map(|(s, e, l)| Span::new(s, e, l)).collect(),
                ))
            }
        }
    }

    fn fits(&self, kind: TaskKind) -> bool {
        matches!(
            (self, kind),
            (
                Output::Label(_),
                TaskKind::Binary | TaskKind::Multiclass | TaskKind::Relation
            ) | (Output::Labels(_), TaskKind::Multilabel)
                | (Output::Spans(_), TaskKind::Seqlabel)
                | (Output::Text(_), TaskKind::Mt)
        )
    }

    /// Class used for balancing: the label for single-label tasks, the
    /// lexicographically smallest gold label otherwise, `"mt"` for
    /// translation, `"none"` when there is no gold label at all.
    pub fn label_key(&self) -> String {
        match self {
            Output::Label(l) => l.clone(),
            Output::Labels(ls) => ls.iter().min().cloned().unwrap_or_else(|| NONE.to_string()),
            Output::Spans(spans) => spans
                .iter()
                .map(|s| &s.label)
                .min()
                .cloned()
                .unwrap_or_else(|| NONE.to_string()),
            Output::Text(_) => "mt".to_string(),
        }
    }
}

/// Rendering of an empty label set or span list.
pub const NONE: &str = "none";
const SPAN_ARROW: &str = " => ";

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub id: String,
    pub input: String,
    pub output: Output,
    pub labels: Option<Vec<String>>,
    pub label_key: String,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    input: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<&'a Vec<String>>,
    output: &'a Output,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    id: String,
    input: String,
    output: Value,
    #[serde(default)]
    labels: Option<Vec<String>>,
}

impl Demonstration {
    pub fn new(id: impl Into<String>, input: impl Into<String>, output: Output) -> Self {
        let label_key = output.label_key();
        Self {
            id: id.into(),
            input: input.into(),
            output,
            labels: None,
            label_key,
        }
    }

    pub fn from_json_line(line: &str, kind: TaskKind) -> Result<Self, String> {
        let raw: RecordIn = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let output = Output::from_json(&raw.output, kind)?;
        let mut demo = Demonstration::new(raw.id, raw.input, output);
        demo.labels = raw.labels;
        Ok(demo)
    }

    /// Canonical JSONL line, keys in lexicographic order.
    pub fn to_json_line(&self) -> String {
        let out = RecordOut {
            id: &self.id,
            input: &self.input,
            labels: self.labels.as_ref(),
            output: &self.output,
        };
        serde_json::to_string(&out).expect("record serialization is infallible")
    }

    /// The gold answer as it appears in a prompt and as a model should
    /// answer it.
    pub fn output_text(&self) -> String {
        render_output(&self.output, &self.input)
    }
}

pub fn render_output(output: &Output, input: &str) -> String {
    match output {
        Output::Label(s) | Output::Text(s) => s.clone(),
        Output::Labels(ls) if ls.is_empty() => NONE.to_string(),
        Output::Labels(ls) => ls.join(", "),
        Output::Spans(spans) if spans.is_empty() => NONE.to_string(),
        Output::Spans(spans) => spans
            .iter()
            .map(|s| format!("{}{SPAN_ARROW}{}", char_slice(input, s.start, s.end), s.label))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("empty id")]
    EmptyId,
    #[error("output shape does not match task kind {0:?}")]
    OutputShape(TaskKind),
    #[error("label {0:?} not in task label inventory")]
    LabelOutOfVocabulary(String),
    #[error("duplicate label {0:?} in gold set")]
    DuplicateLabel(String),
    #[error("translation records must not carry labels")]
    LabelsOnTranslation,
    #[error("empty/negative span ({start}, {end})")]
    EmptySpan { start: usize, end: usize },
    #[error("span ({start}, {end}) exceeds input length {len}")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("spans ({0}, {1}) and ({2}, {3}) overlap")]
    OverlappingSpans(usize, usize, usize, usize),
}

/// First violated record invariant, if any.
pub fn validate_example(demo: &Demonstration, task: &TaskSpec) -> Result<(), Violation> {
    if demo.id.is_empty() {
        return Err(Violation::EmptyId);
    }
    if !demo.output.fits(task.kind) {
        return Err(Violation::OutputShape(task.kind));
    }
    if task.kind == TaskKind::Mt {
        if demo.labels.as_ref().is_some_and(|l| !l.is_empty()) {
            return Err(Violation::LabelsOnTranslation);
        }
        return Ok(());
    }
    for label in demo.labels.iter().flatten() {
        if !task.has_label(label) {
            return Err(Violation::LabelOutOfVocabulary(label.clone()));
        }
    }
    match &demo.output {
        Output::Label(l) if !task.has_label(l) => Err(Violation::LabelOutOfVocabulary(l.clone())),
        Output::Labels(ls) => {
            let mut seen = HashSet::new();
            for l in ls {
                if !task.has_label(l) {
                    return Err(Violation::LabelOutOfVocabulary(l.clone()));
                }
                if !seen.insert(l) {
                    return Err(Violation::DuplicateLabel(l.clone()));
                }
            }
            Ok(())
        }
        Output::Spans(spans) => validate_spans(spans, demo.input.chars().count(), task),
        _ => Ok(()),
    }
}

fn validate_spans(spans: &[Span], len: usize, task: &TaskSpec) -> Result<(), Violation> {
    for s in spans {
        if s.end <= s.start {
            return Err(Violation::EmptySpan {
                start: s.start,
                end: s.end,
            });
        }
        if s.end > len {
            return Err(Violation::SpanOutOfBounds {
                start: s.start,
                end: s.end,
                len,
            });
        }
        if !task.has_label(&s.label) {
            return Err(Violation::LabelOutOfVocabulary(s.label.clone()));
        }
    }
    let mut sorted: Vec<&Span> = spans.iter().collect();
    sorted.sort();
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(Violation::OverlappingSpans(w[0].start, w[0].end, w[1].start, w[1].end));
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid task spec: {0}")]
    InvalidTaskSpec(String),
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord { path: PathBuf, line: usize, reason: String },
    #[error("duplicate demonstration id {0:?}")]
    DuplicateId(String),
    #[error("record {id:?}: label {label:?} not in task label inventory")]
    LabelOutOfVocabulary { id: String, label: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskSpec,
    pub pool: Vec<Demonstration>,
    pub test: Vec<Demonstration>,
}

impl Dataset {
    /// Validate an in-memory dataset against every record invariant.
    pub fn new(task: TaskSpec, pool: Vec<Demonstration>, test: Vec<Demonstration>) -> Result<Self, DatasetError> {
        task.validate().map_err(DatasetError::InvalidTaskSpec)?;
        let mut ids = HashSet::new();
        for demo in pool.iter().chain(&test) {
            check_record(demo, &task, Path::new("<memory>"), 0)?;
            if !ids.insert(demo.id.as_str()) {
                return Err(DatasetError::DuplicateId(demo.id.clone()));
            }
        }
        Ok(Self { task, pool, test })
    }

    pub fn save(&self, pool_path: &Path, test_path: &Path, task_path: &Path) -> Result<(), DatasetError> {
        write_file(pool_path, serialize_jsonl(&self.pool))?;
        write_file(test_path, serialize_jsonl(&self.test))?;
        let spec = serde_json::to_string_pretty(&self.task).expect("task spec serializes");
        write_file(task_path, spec + "\n")
    }

    /// Label classes in balancing order: the inventory first, then any other
    /// keys present in the pool (`"mt"`, `"none"`) sorted.
    pub fn class_order(&self) -> Vec<String> {
        class_order(&self.task, &self.pool)
    }
}

pub fn class_order(task: &TaskSpec, pool: &[Demonstration]) -> Vec<String> {
    let mut order = task.labels.clone();
    let extra: BTreeSet<&str> = pool
        .iter()
        .map(|d| d.label_key.as_str())
        .filter(|k| !task.has_label(k))
        .collect();
    order.extend(extra.into_iter().map(str::to_string));
    order
}

fn write_file(path: &Path, contents: String) -> Result<(), DatasetError> {
    fs::write(path, contents).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn serialize_jsonl(demos: &[Demonstration]) -> String {
    let mut out = String::new();
    for d in demos {
        out.push_str(&d.to_json_line());
        out.push('\n');
    }
    out
}

fn check_record(demo: &Demonstration, task: &TaskSpec, path: &Path, line: usize) -> Result<(), DatasetError> {
    validate_example(demo, task).map_err(|v| match v {
        Violation::LabelOutOfVocabulary(label) => DatasetError::LabelOutOfVocabulary {
            id: demo.id.clone(),
            label,
        },
        other => DatasetError::MalformedRecord {
            path: path.to_path_buf(),
            line,
            reason: other.to_string(),
        },
    })
}

pub fn load_task_spec(path: &Path) -> Result<TaskSpec, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let spec: TaskSpec = serde_json::from_str(&text).map_err(|e| DatasetError::InvalidTaskSpec(e.to_string()))?;
    spec.validate().map_err(DatasetError::InvalidTaskSpec)?;
    Ok(spec)
}

/// Parse and validate one JSONL file. Blank lines are skipped; line numbers
/// are 1-based.
pub fn load_jsonl(path: &Path, task: &TaskSpec) -> Result<Vec<Demonstration>, DatasetError> {
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut demos = Vec::new();
    for (idx, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = idx + 1;
        let malformed = |reason: String| DatasetError::MalformedRecord {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let text = std::str::from_utf8(raw).map_err(|e| malformed(format!("invalid UTF-8: {e}")))?;
        let text = text.strip_suffix('\r').unwrap_or(text);
        if text.trim().is_empty() {
            continue;
        }
        let demo = Demonstration::from_json_line(text, task.kind).map_err(malformed)?;
        check_record(&demo, task, path, line)?;
        demos.push(demo);
    }
    Ok(demos)
}

pub fn load_dataset(pool_path: &Path, test_path: &Path, task_spec_path: &Path) -> Result<Dataset, DatasetError> {
    let task = load_task_spec(task_spec_path)?;
    let pool = load_jsonl(pool_path, &task)?;
    let test = load_jsonl(test_path, &task)?;
    let mut ids = HashSet::new();
    for demo in pool.iter().chain(&test) {
        if !ids.insert(demo.id.as_str()) {
            return Err(DatasetError::DuplicateId(demo.id.clone()));
        }
    }
    Ok(Dataset { task, pool, test })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("prediction could not be parsed: {0}")]
pub struct Unparseable(pub String);

/// Parse a model answer into the task's output shape.
///
/// Only the first non-empty line is read. Label answers are matched against
/// the inventory after normalization. Sequence-labeling answers use the
/// `mention => label; ...` layout produced by [`render_output`]; each mention
/// is located in `input` left to right. A mention that cannot be found is kept
/// as a span placed past the end of the input so that it still scores as a
/// false positive.
pub fn parse_prediction(text: &str, input: &str, task: &TaskSpec) -> Result<Output, Unparseable> {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    match task.kind {
        TaskKind::Mt => Ok(Output::Text(line.to_string())),
        TaskKind::Binary | TaskKind::Multiclass | TaskKind::Relation => task
            .canonical_label(line)
            .map(|l| Output::Label(l.to_string()))
            .ok_or_else(|| Unparseable(format!("{line:?} is not a known label"))),
        TaskKind::Multilabel => {
            if normalize_label(line) == NONE {
                return Ok(Output::Labels(Vec::new()));
            }
            let mut labels = Vec::new();
            for part in line.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let l = task
                    .canonical_label(part)
                    .ok_or_else(|| Unparseable(format!("{part:?} is not a known label")))?;
                if !labels.iter().any(|x: &String| x == l) {
                    labels.push(l.to_string());
                }
            }
            if labels.is_empty() {
                return Err(Unparseable("no labels".into()));
            }
            Ok(Output::Labels(labels))
        }
        TaskKind::Seqlabel => parse_spans(line, input, task).map(Output::Spans),
    }
}

fn parse_spans(line: &str, input: &str, task: &TaskSpec) -> Result<Vec<Span>, Unparseable> {
    if normalize_label(line) == NONE {
        return Ok(Vec::new());
    }
    let chars: Vec<char> = input.chars().collect();
    let mut spans: Vec<Span> = Vec::new();
    let mut cursor = 0;
    let mut overflow = chars.len();
    for entry in line.split(';').map(str::trim).filter(|e| !e.is_empty()) {
        let (mention, label) = entry
            .rsplit_once("=>")
            .map(|(m, l)| (m.trim(), l.trim()))
            .ok_or_else(|| Unparseable(format!("{entry:?} lacks '=>'")))?;
        if mention.is_empty() {
            return Err(Unparseable(format!("{entry:?} has an empty mention")));
        }
        let label = task
            .canonical_label(label)
            .ok_or_else(|| Unparseable(format!("{label:?} is not a known label")))?;
        let needle: Vec<char> = mention.chars().collect();
        let located = find_from(&chars, &needle, cursor).or_else(|| find_free(&chars, &needle, &spans));
        match located {
            Some(start) => {
                cursor = start + needle.len();
                spans.push(Span::new(start, start + needle.len(), label));
            }
            None => {
                spans.push(Span::new(overflow, overflow + needle.len(), label));
                overflow += needle.len();
            }
        }
    }
    Ok(spans)
}

fn find_from(hay: &[char], needle: &[char], from: usize) -> Option<usize> {
    if needle.len() > hay.len() {
        return None;
    }
    (from..=hay.len() - needle.len()).find(|&i| &hay[i..i + needle.len()] == needle)
}

fn find_free(hay: &[char], needle: &[char], taken: &[Span]) -> Option<usize> {
    let mut from = 0;
    while let Some(start) = find_from(hay, needle, from) {
        let end = start + needle.len();
        if taken.iter().all(|s| end <= s.start || start >= s.end) {
            return Some(start);
        }
        from = start + 1;
    }
    None
}
