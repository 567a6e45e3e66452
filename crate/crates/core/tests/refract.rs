mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use refract_core::dataset::{Demonstration, Metric, Output, Span, TaskKind, TaskSpec};
use refract_core::model::{CachedModel, MockModel, MockModelConfig, ResponseCache};
use refract_core::prompt::PromptTemplate;
use refract_core::refract::{
    assemble_refract_context, judge_challenging, read_records, records_by_id, write_records, zero_shot_annotate,
    AnnotateSettings, RefractError, RefractOptions,
};
use refract_core::synthetic::{synthetic_dataset, SyntheticConfig};

fn mt_task() -> TaskSpec {
    TaskSpec {
        name: "mt".into(),
        kind: TaskKind::Mt,
        labels: Vec::new(),
        metric: Metric::CorpusBleu,
        language: "ja".into(),
    }
}

fn ner_task() -> TaskSpec {
    TaskSpec {
        name: "ner".into(),
        kind: TaskKind::Seqlabel,
        labels: vec!["PER".into(), "LOC".into()],
        metric: Metric::SpanF1,
        language: "en".into(),
    }
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..10).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn assembled_contexts_keep_structure(seed in any::<u64>()) {
        let case = common::random_refract_case(&mut ChaCha8Rng::seed_from_u64(seed));
        let ctx = assemble_refract_context(&case.selected, &case.records, &case.options).unwrap();
        prop_assert_eq!(common::check_refract_structure(&case, &ctx), Ok(()));
    }

    #[test]
    fn raising_the_bleu_threshold_only_adds_challenging(hyp in words(), gold in words(), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let demo = Demonstration::new("m", "src", Output::Text(gold));
        let judge = |t: f64| {
            let opts = RefractOptions { mt_bleu_threshold: t, ..RefractOptions::default() };
            judge_challenging(&hyp, &demo, &mt_task(), &opts)
        };
        let (a, b) = (judge(lo), judge(hi));
        prop_assert_eq!(a.judge_score, b.judge_score);
        prop_assert!(!a.challenging || b.challenging);
    }

    #[test]
    fn raising_the_span_threshold_only_adds_challenging(
        gold in prop::collection::btree_set(0usize..5, 0..4),
        pred in prop::collection::btree_set(0usize..5, 0..4),
        lo in 0.0f64..=1.0,
        hi in 0.0f64..=1.0,
    ) {
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let input = "aa bb cc dd ee";
        let span = |w: usize| Span::new(w * 3, w * 3 + 2, if w.is_multiple_of(2) { "PER" } else { "LOC" });
        let demo = Demonstration::new("s", input, Output::Spans(gold.iter().map(|&w| span(w)).collect()));
        let answer = if pred.is_empty() {
            "none".to_string()
        } else {
            pred.iter()
                .map(|&w| format!("{} => {}", &input[w * 3..w * 3 + 2], span(w).label))
                .collect::<Vec<_>>()
                .join("; ")
        };
        let judge = |t: f64| {
            let opts = RefractOptions { seq_f1_threshold: t, ..RefractOptions::default() };
            judge_challenging(&answer, &demo, &ner_task(), &opts)
        };
        let (a, b) = (judge(lo), judge(hi));
        prop_assert!(!a.challenging || b.challenging);
        prop_assert_eq!(judge(1.0).challenging, gold != pred);
    }
}

#[test]
fn unparseable_answers_are_challenging() {
    let demo = common::demo("d", "x", "a");
    let j = judge_challenging("no idea", &demo, &common::task(&["a", "b"]), &RefractOptions::default());
    assert!(j.challenging);
    assert_eq!(j.judge_score, 0.0);
}

#[test]
fn warm_cache_annotation_is_idempotent() {
    let ds = synthetic_dataset(&SyntheticConfig {
        pool_size: 60,
        test_size: 1,
        seed: 4,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::new(dir.path().join("cache"));
    let template = PromptTemplate::default();
    let options = RefractOptions::default();
    let settings = AnnotateSettings::default();

    let mock = MockModel::new("m", MockModelConfig::fixed_accuracy(0.5, 9));
    let cold = CachedModel::new(&mock, Some(&cache));
    let first = zero_shot_annotate(&ds.pool, &ds.task, &cold, &template, &options, &settings).unwrap();
    assert_eq!(cold.backend_calls(), 60);
    let challenging = first.iter().filter(|r| r.challenging).count();
    assert!(challenging > 0 && challenging < 60, "{challenging}");

    let fresh = MockModel::new("m", MockModelConfig::fixed_accuracy(0.5, 9));
    let warm = CachedModel::new(&fresh, Some(&cache));
    let second = zero_shot_annotate(&ds.pool, &ds.task, &warm, &template, &options, &settings).unwrap();
    assert_eq!(warm.backend_calls(), 0);
    assert_eq!(fresh.calls(), 0);
    assert_eq!(first, second);
    assert_eq!(
        first.iter().map(|r| &r.demo_id).collect::<Vec<_>>(),
        ds.pool.iter().map(|d| &d.id).collect::<Vec<_>>()
    );

    let path = dir.path().join("records.jsonl");
    write_records(&path, &first).unwrap();
    assert_eq!(read_records(&path).unwrap(), first);
}

#[test]
fn echo_gold_finds_nothing_challenging() {
    let ds = synthetic_dataset(&SyntheticConfig {
        pool_size: 30,
        test_size: 1,
        seed: 2,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let mock = MockModel::new("gold", MockModelConfig::echo_gold());
    let model = CachedModel::new(&mock, None);
    let records = zero_shot_annotate(
        &ds.pool,
        &ds.task,
        &model,
        &PromptTemplate::default(),
        &RefractOptions::default(),
        &AnnotateSettings::default(),
    )
    .unwrap();
    assert!(records.iter().all(|r| !r.challenging && r.judge_score == 1.0));
}

#[test]
fn missing_records_are_reported() {
    let case = common::random_refract_case(&mut ChaCha8Rng::seed_from_u64(1));
    if case.selected.is_empty() {
        return;
    }
    let err = assemble_refract_context(&case.selected, &HashMap::new(), &RefractOptions::default()).unwrap_err();
    assert!(matches!(err, RefractError::MissingRecord(_)), "{err}");
    let records = records_by_id(case.records.values().cloned().collect());
    assert!(assemble_refract_context(&case.selected, &records, &case.options).is_ok());
}
