use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn refract(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refract")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/intent")
}

fn copy_fixture(dir: &Path) {
    for f in ["task.json", "pool.jsonl", "test.jsonl", "config.json"] {
        std::fs::copy(fixture().join(f), dir.join(f)).unwrap();
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_reports_and_reuses_cache() {
    let dir = tempfile::tempdir().unwrap();
    copy_fixture(dir.path());
    let config = dir.path().join("config.json");

    let first = refract(&["run", "--config", s(&config)]);
    assert_eq!(first.status.code(), Some(0), "{}", text(&first.stderr));
    let out = dir.path().join("out");
    for f in ["results.json", "deltas.csv", "deltas.md"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(
        text(&first.stdout).contains("| tfidf-balanced |"),
        "{}",
        text(&first.stdout)
    );
    let results = std::fs::read(out.join("results.json")).unwrap();

    let second = refract(&["run", "--config", s(&config)]);
    assert_eq!(second.status.code(), Some(0));
    assert!(
        text(&second.stderr).contains("backend calls: 0"),
        "{}",
        text(&second.stderr)
    );
    assert_eq!(std::fs::read(out.join("results.json")).unwrap(), results);

    let elsewhere = dir.path().join("again");
    let report = refract(&[
        "report",
        "--results",
        s(&out.join("results.json")),
        "--out-dir",
        s(&elsewhere),
    ]);
    assert_eq!(report.status.code(), Some(0), "{}", text(&report.stderr));
    assert_eq!(
        std::fs::read(elsewhere.join("deltas.md")).unwrap(),
        std::fs::read(out.join("deltas.md")).unwrap()
    );
}

#[test]
fn usage_errors_exit_one_and_runtime_errors_exit_two() {
    assert_eq!(refract(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(refract(&["select", "--k", "3"]).status.code(), Some(1));
    let missing = refract(&["run", "--config", "/nonexistent/config.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(text(&missing.stderr).starts_with("error:"));
    assert_eq!(refract(&["--help"]).status.code(), Some(0));
}

#[test]
fn select_with_repeats_prints_at_most_twice_k_entries() {
    let dir = tempfile::tempdir().unwrap();
    let (pool, task) = (fixture().join("pool.jsonl"), fixture().join("task.json"));
    let records = dir.path().join("records.jsonl");
    let zs = refract(&[
        "zeroshot",
        "--pool",
        s(&pool),
        "--task",
        s(&task),
        "--out",
        s(&records),
        "--model",
        r#"{"backend": "mock", "mode": "fixed_accuracy", "accuracy": 0.0}"#,
    ]);
    assert_eq!(zs.status.code(), Some(0), "{}", text(&zs.stderr));

    let base = [
        "select",
        "--pool",
        s(&pool),
        "--task",
        s(&task),
        "--query",
        "cheapest fare to denver",
        "--k",
        "3",
    ];
    let plain = refract(&base);
    assert_eq!(plain.status.code(), Some(0), "{}", text(&plain.stderr));
    assert_eq!(text(&plain.stdout).lines().count(), 3);

    let mut args = base.to_vec();
    args.extend(["--refract", "--records", s(&records)]);
    let out = refract(&args);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let lines: Vec<serde_json::Value> = text(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines.len() <= 6);
    assert_eq!(lines.len(), 6, "every demo is challenging at accuracy 0");
    assert!(lines[..3].iter().all(|l| l["is_repeat"] == false));
    assert!(lines[3..]
        .iter()
        .all(|l| l["is_repeat"] == true && l["challenging"] == true));
    assert_eq!(lines[0]["id"], lines[3]["id"]);

    args.extend(["--max-repeats", "1"]);
    let capped = refract(&args);
    assert_eq!(text(&capped.stdout).lines().count(), 4);

    let rendered = refract(&[&base[..], &["--render"]].concat());
    assert!(text(&rendered.stdout).ends_with("Input: cheapest fare to denver\nOutput:\n"));
}

#[test]
fn index_summarizes_a_pool() {
    let out = refract(&[
        "index",
        "--pool",
        s(&fixture().join("pool.jsonl")),
        "--task",
        s(&fixture().join("task.json")),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out.stdout).starts_with("documents: 28\n"));
}
