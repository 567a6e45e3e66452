use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, HarnessError, ModelSpec, RetrieverSpec};
use crate::dataset::{
    load_dataset, parse_prediction, render_output, Dataset, Demonstration, Metric, Output, Span, TaskKind, TaskSpec,
};
use crate::metrics::{accuracy, corpus_bleu, f1_macro, f1_multilabel, span_f1, MetricError, ScoreReport, Smoothing};
use crate::model::{
    CachedModel, GenerationRequest, HttpModelClient, MockModel, MockProbe, ModelClient, ModelError, ResponseCache,
};
use crate::prompt::{fit_to_budget, render_prompt, PromptTemplate, TestInput, TokenBudget, TokenCounter};
use crate::refract::{
    assemble_refract_context, records_by_id, zero_shot_annotate, AnnotateSettings, IclContext, RefractOptions,
};
use crate::retrieval::{
    build_tfidf_index, embed_query, load_sidecar, retrieve_dense, retrieve_random, retrieve_tfidf, DenseIndex,
    EmbeddingStore, HttpEmbedder, RetrievalError, RetrievalRequest, Retrieved, RetrieverKind, TextEmbedder, TfIdfIndex,
};
use crate::tokenize::TokenizerConfig;

/// A fully loaded experiment. Build one with [`Experiment::new`] for
/// in-memory data or [`Experiment::from_config`] for a config file.
pub struct Experiment {
    pub dataset: Dataset,
    pub template: PromptTemplate,
    pub budget: TokenBudget,
    pub retrievers: Vec<RetrieverSpec>,
    pub k_values: Vec<usize>,
    pub refract: Option<RefractOptions>,
    pub seed: u64,
    pub max_inflight: usize,
    pub partial_ok: bool,
    pub max_output_tokens: usize,
    pub dense: Option<EmbeddingStore>,
    pub multitask: Option<EmbeddingStore>,
    pub embedder: Option<Box<dyn TextEmbedder>>,
    /// Digest reported in results; derived from the settings when unset.
    pub config_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub report: ScoreReport,
    pub stderr: Option<f64>,
    pub failures: usize,
    pub unparseable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    /// Row name, e.g. `tfidf-balanced`.
    pub retriever: String,
    pub kind: RetrieverKind,
    pub balance: bool,
    pub k: usize,
    /// `k` after clipping to the pool size.
    pub effective_k: usize,
    pub clipped: bool,
    /// Examples whose context was cut to fit the token budget.
    pub trimmed: usize,
    /// Examples whose whole context was dropped.
    pub emptied: usize,
    /// Reported as N/A: some example fell back to zero-shot.
    pub overflow: bool,
    pub failures: usize,
    pub unparseable: usize,
    pub mean_context_len: f64,
    pub report: ScoreReport,
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefractSummary {
    pub annotated: usize,
    pub challenging: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_digest: String,
    pub task: String,
    pub metric: Metric,
    pub model_id: String,
    pub template_hash: String,
    pub seed: u64,
    pub pool_size: usize,
    pub test_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refract: Option<RefractOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refract_summary: Option<RefractSummary>,
    pub baseline: Baseline,
    pub cells: Vec<CellResult>,
}

impl RunResult {
    pub fn cell(&self, retriever: &str, k: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.retriever == retriever && c.k == k)
    }
}

/// Counters that differ between cold and warm runs, kept out of
/// [`RunResult`] so results stay byte-stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunStats {
    pub backend_calls: usize,
    pub prompts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub report: ScoreReport,
    pub stderr: Option<f64>,
    pub unparseable: usize,
}

/// A model answer; `None` when the call failed under `partial_ok`.
pub type Prediction = Option<String>;

const UNPARSEABLE: &str = "unparseable";

/// Parse raw answers and score them with the task metric. Failed or
/// unparseable answers always count as wrong.
pub fn score_predictions(
    task: &TaskSpec,
    predictions: &[Prediction],
    golds: &[Demonstration],
) -> Result<Scored, MetricError> {
    if predictions.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            preds: predictions.len(),
            golds: golds.len(),
        });
    }
    let parsed: Vec<Option<Output>> = predictions
        .iter()
        .zip(golds)
        .map(|(p, g)| p.as_deref().and_then(|t| parse_prediction(t, &g.input, task).ok()))
        .collect();
    let unparseable = parsed.iter().filter(|p| p.is_none()).count();
    let n = golds.len() as f64;
    match task.metric {
        Metric::Accuracy | Metric::F1Macro => {
            let preds: Vec<String> = parsed
                .iter()
                .map(|p| match p {
                    Some(Output::Label(l)) => l.clone(),
                    _ => String::new(),
                })
                .collect();
            let gold: Vec<String> = golds.iter().map(|g| render_output(&g.output, &g.input)).collect();
            let report = if task.metric == Metric::Accuracy {
                accuracy(&preds, &gold)?
            } else {
                f1_macro(&preds, &gold, &task.labels)?
            };
            let stderr = (task.metric == Metric::Accuracy).then(|| {
                let p = report.value;
                (p * (1.0 - p) / n).sqrt()
            });
            Ok(Scored {
                report,
                stderr,
                unparseable,
            })
        }
        Metric::F1Multilabel => {
            let preds: Vec<Vec<String>> = parsed
                .iter()
                .map(|p| match p {
                    Some(Output::Labels(l)) => l.clone(),
                    _ => vec![UNPARSEABLE.to_string()],
                })
                .collect();
            let gold: Vec<Vec<String>> = golds
                .iter()
                .map(|g| match &g.output {
                    Output::Labels(l) => l.clone(),
                    _ => Vec::new(),
                })
                .collect();
            let report = f1_multilabel(&preds, &gold)?;
            let per: Vec<f64> = preds
                .iter()
                .zip(&gold)
                .map(|(p, g)| f1_multilabel(std::slice::from_ref(p), std::slice::from_ref(g)).map(|r| r.value))
                .collect::<Result<_, _>>()?;
            let stderr = (per.len() > 1).then(|| {
                let mean = report.value;
                let var = per.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            });
            Ok(Scored {
                report,
                stderr,
                unparseable,
            })
        }
        Metric::SpanF1 => {
            let preds: Vec<Vec<Span>> = parsed
                .iter()
                .zip(golds)
                .map(|(p, g)| match p {
                    Some(Output::Spans(s)) => s.clone(),
                    _ => {
                        let end = g.input.chars().count();
                        vec![Span::new(end, end + 1, UNPARSEABLE)]
                    }
                })
                .collect();
            let gold: Vec<Vec<Span>> = golds
                .iter()
                .map(|g| match &g.output {
                    Output::Spans(s) => s.clone(),
                    _ => Vec::new(),
                })
                .collect();
            Ok(Scored {
                report: span_f1(&preds, &gold)?,
                stderr: None,
                unparseable,
            })
        }
        Metric::CorpusBleu => {
            let hyps: Vec<String> = parsed
                .iter()
                .map(|p| match p {
                    Some(Output::Text(t)) => t.clone(),
                    _ => String::new(),
                })
                .collect();
            let refs: Vec<String> = golds.iter().map(|g| render_output(&g.output, &g.input)).collect();
            Ok(Scored {
                report: corpus_bleu(&hyps, &refs, 4, Smoothing::None)?,
                stderr: None,
                unparseable,
            })
        }
    }
}

fn example_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

struct Outcome {
    prediction: Prediction,
    trimmed: bool,
    emptied: bool,
    context_len: usize,
}

impl Experiment {
    pub fn new(dataset: Dataset, retrievers: Vec<RetrieverSpec>, k_values: Vec<usize>) -> Self {
        Self {
            dataset,
            template: PromptTemplate::default(),
            budget: TokenBudget::new(1 << 20, 256, TokenCounter::Whitespace),
            retrievers,
            k_values,
            refract: None,
            seed: 0,
            max_inflight: 4,
            partial_ok: false,
            max_output_tokens: 64,
            dense: None,
            multitask: None,
            embedder: None,
            config_digest: None,
        }
    }

    pub fn from_config(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let dataset = load_dataset(
            &config.resolve(&config.pool),
            &config.resolve(&config.test),
            &config.resolve(&config.task),
        )?;
        let template = match &config.template {
            Some(p) => PromptTemplate::load(&config.resolve(p))?,
            None => PromptTemplate::default(),
        };
        let emb = config.embeddings.clone().unwrap_or_default();
        let load = |p: &Option<std::path::PathBuf>| -> Result<Option<EmbeddingStore>, HarnessError> {
            Ok(match p {
                Some(p) => Some(load_sidecar(&config.resolve(p))?),
                None => None,
            })
        };
        Ok(Self {
            template,
            budget: config.budget.clone(),
            refract: config.refract.clone(),
            seed: config.seed,
            max_inflight: config.max_inflight,
            partial_ok: config.partial_ok,
            max_output_tokens: config.max_output_tokens,
            dense: load(&emb.dense)?,
            multitask: load(&emb.multitask)?,
            embedder: emb.endpoint.map(|url| {
                Box::new(HttpEmbedder::new(url, std::env::var("MODEL_API_KEY").ok())) as Box<dyn TextEmbedder>
            }),
            config_digest: Some(config.digest()),
            ..Self::new(dataset, config.retrievers.clone(), config.k_values.clone())
        })
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.retrievers.is_empty() {
            return bad("at least one retriever is required");
        }
        if self.k_values.is_empty() || self.k_values[0] == 0 || self.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return bad("k_values must be positive and strictly increasing");
        }
        if self.dataset.pool.is_empty() {
            return Err(RetrievalError::EmptyPool.into());
        }
        if self.dataset.test.is_empty() {
            return bad("test set is empty");
        }
        self.budget.validate()?;
        self.template.validate()?;
        if let Some(r) = &self.refract {
            r.validate()?;
        }
        Ok(())
    }

    fn digest(&self) -> String {
        if let Some(d) = &self.config_digest {
            return d.clone();
        }
        let mut h = Sha256::new();
        let settings = serde_json::json!({
            "task": self.dataset.task,
            "template": self.template,
            "budget": self.budget,
            "retrievers": self.retrievers,
            "k_values": self.k_values,
            "refract": self.refract,
            "seed": self.seed,
            "partial_ok": self.partial_ok,
            "max_output_tokens": self.max_output_tokens,
        });
        h.update(settings.to_string().as_bytes());
        for d in self.dataset.pool.iter().chain(&self.dataset.test) {
            h.update(d.to_json_line().as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Run every cell against `client`, going through `cache` when given.
    pub fn run(
        &self,
        client: &dyn ModelClient,
        cache: Option<&ResponseCache>,
    ) -> Result<(RunResult, RunStats), HarnessError> {
        self.validate()?;
        let runner = Runner::new(self, CachedModel::new(client, cache))?;
        runner.run()
    }
}

struct Runner<'a> {
    exp: &'a Experiment,
    model: CachedModel<'a>,
    template_hash: String,
    tfidf: TfIdfIndex,
    dense: Option<DenseIndex>,
    multitask: Option<DenseIndex>,
    threads: rayon::ThreadPool,
    prompts: std::sync::atomic::AtomicUsize,
}

impl<'a> Runner<'a> {
    fn new(exp: &'a Experiment, model: CachedModel<'a>) -> Result<Self, HarnessError> {
        let pool = &exp.dataset.pool;
        let index = |store: &Option<EmbeddingStore>, kind| -> Result<Option<DenseIndex>, HarnessError> {
            let wanted = exp.retrievers.iter().any(|r| r.kind == kind);
            match (wanted, store) {
                (false, _) => Ok(None),
                (true, Some(s)) => Ok(Some(DenseIndex::new(s, pool, kind)?)),
                (true, None) => Err(HarnessError::Config(format!("retriever {kind} has no embeddings"))),
            }
        };
        let tokenizer = if exp.dataset.task.kind == TaskKind::Mt {
            TokenizerConfig::cased()
        } else {
            TokenizerConfig::default()
        };
        Ok(Self {
            exp,
            template_hash: exp.template.hash(),
            tfidf: build_tfidf_index(pool, tokenizer)?,
            dense: index(&exp.dense, RetrieverKind::Dense)?,
            multitask: index(&exp.multitask, RetrieverKind::Multitask)?,
            threads: rayon::ThreadPoolBuilder::new()
                .num_threads(exp.max_inflight.max(1))
                .build()
                .map_err(|e| HarnessError::Config(e.to_string()))?,
            model,
            prompts: Default::default(),
        })
    }

    fn task(&self) -> &TaskSpec {
        &self.exp.dataset.task
    }

    fn run(&self) -> Result<(RunResult, RunStats), HarnessError> {
        let exp = self.exp;
        let tests = &exp.dataset.test;

        log::info!("zero-shot baseline over {} test examples", tests.len());
        let baseline_preds: Vec<Prediction> = self.threads.install(|| {
            tests
                .par_iter()
                .map(|t| {
                    let fitted = fit_to_budget(&IclContext::default(), &t.input, &exp.template, &exp.budget)?;
                    let prompt = render_prompt(&fitted.context, &t.input, &exp.template)?;
                    self.ask(prompt, t, &IclContext::default())
                })
                .collect::<Result<_, HarnessError>>()
        })?;
        let scored = score_predictions(self.task(), &baseline_preds, tests)?;
        let baseline = Baseline {
            report: scored.report,
            stderr: scored.stderr,
            failures: baseline_preds.iter().filter(|p| p.is_none()).count(),
            unparseable: scored.unparseable,
        };

        let mut grid = Vec::new();
        for spec in &exp.retrievers {
            for &k in &exp.k_values {
                let retrieved: Vec<Retrieved> = self.threads.install(|| {
                    tests
                        .par_iter()
                        .map(|t| self.retrieve(spec, k, t))
                        .collect::<Result<_, HarnessError>>()
                })?;
                grid.push((*spec, k, retrieved));
            }
        }

        let (records, refract_summary) = match &exp.refract {
            Some(options) => {
                let selected: BTreeSet<&str> = grid
                    .iter()
                    .flat_map(|(_, _, r)| r.iter().flat_map(|r| r.demos.iter().map(|d| d.demo.id.as_str())))
                    .collect();
                let subset: Vec<Demonstration> = exp
                    .dataset
                    .pool
                    .iter()
                    .filter(|d| selected.contains(d.id.as_str()))
                    .cloned()
                    .collect();
                log::info!("zero-shot annotation of {} selected demonstrations", subset.len());
                let settings = AnnotateSettings {
                    max_inflight: exp.max_inflight,
                    partial_ok: exp.partial_ok,
                    max_output_tokens: exp.max_output_tokens,
                    stop: Vec::new(),
                };
                let records = zero_shot_annotate(&subset, self.task(), &self.model, &exp.template, options, &settings)?;
                self.prompts
                    .fetch_add(records.len(), std::sync::atomic::Ordering::SeqCst);
                let summary = RefractSummary {
                    annotated: records.len(),
                    challenging: records.iter().filter(|r| r.challenging).count(),
                };
                (Some(records_by_id(records)), Some(summary))
            }
            None => (None, None),
        };

        let test_guess = exp.refract.as_ref().is_some_and(|r| r.test_zero_shot);
        let mut cells = Vec::with_capacity(grid.len());
        for (spec, k, retrieved) in &grid {
            log::info!("cell {} k={k}", spec.label());
            let outcomes: Vec<Outcome> = self.threads.install(|| {
                tests
                    .par_iter()
                    .zip(retrieved)
                    .zip(&baseline_preds)
                    .map(|((t, r), zero)| {
                        let context = match (&exp.refract, &records) {
                            (Some(options), Some(records)) => assemble_refract_context(&r.demos, records, options)?,
                            _ => IclContext::plain(&r.demos),
                        };
                        let input = TestInput {
                            text: &t.input,
                            guess: if test_guess {
                                Some(zero.as_deref().unwrap_or(""))
                            } else {
                                None
                            },
                        };
                        let fitted = fit_to_budget(&context, input, &exp.template, &exp.budget)?;
                        let prompt = render_prompt(&fitted.context, input, &exp.template)?;
                        let prediction = self.ask(prompt, t, &fitted.context)?;
                        Ok(Outcome {
                            prediction,
                            trimmed: !fitted.dropped.is_empty(),
                            emptied: !context.is_empty() && fitted.context.is_empty(),
                            context_len: fitted.context.len(),
                        })
                    })
                    .collect::<Result<_, HarnessError>>()
            })?;
            let preds: Vec<Prediction> = outcomes.iter().map(|o| o.prediction.clone()).collect();
            let scored = score_predictions(self.task(), &preds, tests)?;
            let emptied = outcomes.iter().filter(|o| o.emptied).count();
            cells.push(CellResult {
                retriever: spec.label(),
                kind: spec.kind,
                balance: spec.balance,
                k: *k,
                effective_k: (*k).min(exp.dataset.pool.len()),
                clipped: retrieved.iter().any(|r| r.clipped),
                trimmed: outcomes.iter().filter(|o| o.trimmed).count(),
                emptied,
                overflow: emptied > 0,
                failures: preds.iter().filter(|p| p.is_none()).count(),
                unparseable: scored.unparseable,
                mean_context_len: outcomes.iter().map(|o| o.context_len).sum::<usize>() as f64 / tests.len() as f64,
                report: scored.report,
                stderr: scored.stderr,
            });
        }

        let result = RunResult {
            config_digest: exp.digest(),
            task: self.task().name.clone(),
            metric: self.task().metric,
            model_id: self.model.model_id().to_string(),
            template_hash: self.template_hash.clone(),
            seed: exp.seed,
            pool_size: exp.dataset.pool.len(),
            test_size: tests.len(),
            refract: exp.refract.clone(),
            refract_summary,
            baseline,
            cells,
        };
        let stats = RunStats {
            backend_calls: self.model.backend_calls(),
            prompts: self.prompts.load(std::sync::atomic::Ordering::SeqCst),
        };
        Ok((result, stats))
    }

    fn query_vector(
        &self,
        store: Option<&EmbeddingStore>,
        test: &Demonstration,
        prefix: Option<&TaskSpec>,
    ) -> Result<Vec<f64>, HarnessError> {
        if let Some(v) = store.and_then(|s| s.get(&test.id)) {
            return Ok(v.to_vec());
        }
        match &self.exp.embedder {
            Some(e) => Ok(embed_query(e.as_ref(), &test.input, prefix)?),
            None => Err(RetrievalError::MissingVector(test.id.clone()).into()),
        }
    }

    fn retrieve(&self, spec: &RetrieverSpec, k: usize, test: &Demonstration) -> Result<Retrieved, HarnessError> {
        let exp = self.exp;
        let task = self.task();
        let request = RetrievalRequest::new(test.input.clone(), k)
            .seed(example_seed(exp.seed, &test.id))
            .balanced(spec.balance);
        let dense = |index: &Option<DenseIndex>, store: &Option<EmbeddingStore>, prefix| {
            let index = index.as_ref().expect("index built for configured retriever");
            let q = self.query_vector(store.as_ref(), test, prefix)?;
            Ok::<_, HarnessError>(retrieve_dense(index, &q, &request, task)?)
        };
        Ok(match spec.kind {
            RetrieverKind::Random => retrieve_random(&exp.dataset.pool, &request, task)?,
            RetrieverKind::Tfidf => retrieve_tfidf(&self.tfidf, &request, task)?,
            RetrieverKind::Dense => dense(&self.dense, &exp.dense, None)?,
            RetrieverKind::Multitask => dense(&self.multitask, &exp.multitask, Some(task))?,
        })
    }

    fn ask(&self, prompt: String, test: &Demonstration, context: &IclContext) -> Result<Prediction, HarnessError> {
        self.prompts.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let prompt = if self.model.wants_probe() {
            let q = self.tfidf.vectorize(&test.input);
            let sim = |d: &Demonstration| self.tfidf.doc_vector(&d.id).map_or(0.0, |v| q.dot(v));
            let originals = context.originals().map(|e| sim(&e.demo)).collect();
            let repeats = context.repeats().map(|e| sim(&e.demo)).collect();
            MockProbe::for_demo(test, self.task())
                .with_similarities(originals, repeats)
                .attach(&prompt)
        } else {
            prompt
        };
        let request = GenerationRequest::new(prompt, self.exp.max_output_tokens);
        match self.model.generate(&self.template_hash, &request) {
            Ok(text) => Ok(Some(text)),
            Err(e @ ModelError::Cache(_)) => Err(HarnessError::Model {
                id: test.id.clone(),
                source: e,
            }),
            Err(e) if self.exp.partial_ok => {
                log::warn!("{}: {e}", test.id);
                Ok(None)
            }
            Err(source) => Err(HarnessError::Model {
                id: test.id.clone(),
                source,
            }),
        }
    }
}

/// Load the dataset, build the configured backend and cache, and run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(RunResult, RunStats), HarnessError> {
    match &config.model {
        ModelSpec::Mock { model_id, config: mock } => {
            let client = MockModel::new(model_id.clone(), mock.clone());
            run_experiment_with(config, &client)
        }
        ModelSpec::Http(spec) => {
            let client = HttpModelClient::new(spec.resolve(config.max_inflight)?);
            run_experiment_with(config, &client)
        }
    }
}

/// [`run_experiment`] against a caller-supplied client.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    client: &dyn ModelClient,
) -> Result<(RunResult, RunStats), HarnessError> {
    let experiment = Experiment::from_config(config)?;
    let cache = config.cache_dir.as_ref().map(|d| ResponseCache::new(config.resolve(d)));
    experiment.run(client, cache.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MockModelConfig;
    use crate::synthetic::{synthetic_dataset, SyntheticConfig};

    fn small() -> Dataset {
        synthetic_dataset(&SyntheticConfig {
            pool_size: 60,
            test_size: 20,
            seed: 4,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    fn specs() -> Vec<RetrieverSpec> {
        vec![
            RetrieverSpec::new(RetrieverKind::Random, false),
            RetrieverSpec::new(RetrieverKind::Tfidf, true),
        ]
    }

    #[test]
    fn echo_gold_scores_one_everywhere() {
        let exp = Experiment::new(small(), specs(), vec![1, 5]);
        let mock = MockModel::new("mock", MockModelConfig::echo_gold());
        let (result, stats) = exp.run(&mock, None).unwrap();
        assert_eq!(result.baseline.report.value, 1.0);
        assert_eq!(result.cells.len(), 4);
        assert!(result.cells.iter().all(|c| c.report.value == 1.0 && !c.overflow));
        assert_eq!(stats.backend_calls, 20 * 5);
    }

    #[test]
    fn k_beyond_pool_is_clipped() {
        let exp = Experiment::new(small(), specs(), vec![5, 100]);
        let mock = MockModel::new("mock", MockModelConfig::echo_gold());
        let (result, _) = exp.run(&mock, None).unwrap();
        let c = result.cell("random", 100).unwrap();
        assert!(c.clipped);
        assert_eq!(c.effective_k, 60);
        assert!(!result.cell("random", 5).unwrap().clipped);
    }

    #[test]
    fn same_settings_same_result() {
        let mock = MockModel::new("mock", MockModelConfig::fixed_accuracy(0.6, 2));
        let mut exp = Experiment::new(small(), specs(), vec![1, 3]);
        exp.refract = Some(RefractOptions::default());
        let a = serde_json::to_string(&exp.run(&mock, None).unwrap().0).unwrap();
        let b = serde_json::to_string(&exp.run(&mock, None).unwrap().0).unwrap();
        assert_eq!(a, b);
        exp.max_inflight = 1;
        let c = serde_json::to_string(&exp.run(&mock, None).unwrap().0).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn tight_budget_marks_overflow() {
        let mut exp = Experiment::new(small(), specs(), vec![1, 20]);
        let zero_shot = crate::prompt::count_tokens(
            &render_prompt(&IclContext::default(), &exp.dataset.test[0].input, &exp.template).unwrap(),
            &TokenCounter::Whitespace,
        )
        .unwrap();
        // room for the query and a few demo blocks, never twenty
        exp.budget = TokenBudget::new(zero_shot + 60, 10, TokenCounter::Whitespace);
        let mock = MockModel::new("mock", MockModelConfig::echo_gold());
        let (result, _) = exp.run(&mock, None).unwrap();
        let wide = result.cell("random", 20).unwrap();
        assert!(wide.trimmed > 0);
        assert!(wide.mean_context_len < 20.0);
        exp.budget = TokenBudget::new(zero_shot + 11, 10, TokenCounter::Whitespace);
        let (result, _) = exp.run(&mock, None).unwrap();
        let c = result.cell("tfidf-balanced", 1).unwrap();
        assert!(c.overflow && c.emptied == 20);
    }

    #[test]
    fn unavailable_model_aborts_or_degrades() {
        struct Down;
        impl ModelClient for Down {
            fn model_id(&self) -> &str {
                "down"
            }
            fn generate(&self, _: &GenerationRequest) -> Result<String, ModelError> {
                Err(ModelError::ModelUnavailable("offline".into()))
            }
        }
        let mut exp = Experiment::new(small(), specs(), vec![1]);
        assert!(matches!(exp.run(&Down, None), Err(HarnessError::Model { .. })));
        exp.partial_ok = true;
        let (result, _) = exp.run(&Down, None).unwrap();
        assert_eq!(result.baseline.failures, 20);
        assert_eq!(result.baseline.report.value, 0.0);
        assert!(result.cells.iter().all(|c| c.failures == 20));
    }

    fn demo(id: &str, input: &str, output: Output) -> Demonstration {
        Demonstration::new(id, input, output)
    }

    #[test]
    fn scoring_per_metric() {
        let task = |kind, labels: &[&str], metric| TaskSpec {
            name: "t".into(),
            kind,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            metric,
            language: "en".into(),
        };
        let t = task(TaskKind::Binary, &["yes", "no"], Metric::Accuracy);
        let golds = vec![
            demo("a", "x", Output::Label("yes".into())),
            demo("b", "x", Output::Label("no".into())),
            demo("c", "x", Output::Label("no".into())),
            demo("d", "x", Output::Label("yes".into())),
        ];
        let preds = vec![Some("Yes".into()), Some("no".into()), None, Some("maybe".into())];
        let s = score_predictions(&t, &preds, &golds).unwrap();
        assert_eq!(s.report.value, 0.5);
        assert_eq!(s.unparseable, 2);
        assert_eq!(s.stderr, Some(0.25));

        let t = task(TaskKind::Seqlabel, &["loc"], Metric::SpanF1);
        let golds = vec![demo("a", "to boston", Output::Spans(vec![Span::new(3, 9, "loc")]))];
        let s = score_predictions(&t, &[Some("boston => loc".into())], &golds).unwrap();
        assert_eq!(s.report.value, 1.0);
        let s = score_predictions(&t, &[Some("garbage".into())], &golds).unwrap();
        assert_eq!(s.report.value, 0.0);

        let t = task(TaskKind::Mt, &[], Metric::CorpusBleu);
        let golds = vec![demo("a", "src", Output::Text("the cat sat".into()))];
        let s = score_predictions(&t, &[Some("the cat sat".into())], &golds).unwrap();
        assert_eq!(s.report.value, 1.0);

        let t = task(TaskKind::Multilabel, &["a", "b"], Metric::F1Multilabel);
        let golds = vec![demo("x", "q", Output::Labels(vec!["a".into(), "b".into()]))];
        let s = score_predictions(&t, &[Some("a".into())], &golds).unwrap();
        assert!((s.report.value - 2.0 / 3.0).abs() < 1e-12);
    }
}
