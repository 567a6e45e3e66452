use std::fs;
use std::path::{Path, PathBuf};

use super::{HarnessError, RunResult};
use crate::metrics::{delta_table, CellRun, DeltaTable};

pub const RESULTS_FILE: &str = "results.json";
pub const DELTAS_CSV: &str = "deltas.csv";
pub const DELTAS_MD: &str = "deltas.md";

/// Delta table for a run; overflow cells have no value and render as N/A.
pub fn render_report(result: &RunResult) -> DeltaTable {
    let runs: Vec<CellRun> = result
        .cells
        .iter()
        .map(|c| CellRun {
            retriever: c.retriever.clone(),
            k: c.k,
            value: (!c.overflow).then_some(c.report.value),
            n: c.report.support,
        })
        .collect();
    delta_table(&runs, result.baseline.report.value, result.metric)
}

/// Write `results.json`, `deltas.csv` and `deltas.md` into `out_dir`.
pub fn emit_report(result: &RunResult, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let table = render_report(result);
    let json = serde_json::to_string_pretty(result).expect("result serializes") + "\n";
    let mut written = Vec::new();
    for (name, body) in [
        (RESULTS_FILE, json),
        (DELTAS_CSV, table.to_csv()),
        (DELTAS_MD, table.to_markdown()),
    ] {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn load_result(path: &Path) -> Result<RunResult, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::io(path, e))
}
