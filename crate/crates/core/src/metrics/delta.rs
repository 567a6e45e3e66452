use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::Metric;

/// One experiment cell as fed to [`delta_table`]. `value` is `None` for
/// cells that could not be run at this `k` (context overflow).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub retriever: String,
    pub k: usize,
    pub value: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCell {
    pub k: usize,
    pub value: Option<f64>,
    pub delta: Option<f64>,
    pub n: usize,
}

/// Per-retriever deltas from the zero-shot baseline across `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub metric: Metric,
    pub baseline_r0: f64,
    pub k_values: Vec<usize>,
    /// Rows keep first-seen retriever order.
    pub rows: Vec<(String, Vec<DeltaCell>)>,
}

pub fn delta_table(runs: &[CellRun], baseline: f64, metric: Metric) -> DeltaTable {
    let k_values: Vec<usize> = runs.iter().map(|r| r.k).collect::<BTreeSet<_>>().into_iter().collect();
    let mut order: Vec<&str> = Vec::new();
    let mut cells: BTreeMap<(&str, usize), &CellRun> = BTreeMap::new();
    for r in runs {
        if !order.contains(&r.retriever.as_str()) {
            order.push(&r.retriever);
        }
        cells.insert((r.retriever.as_str(), r.k), r);
    }
    let rows = order
        .into_iter()
        .map(|name| {
            let row = k_values
                .iter()
                .map(|&k| match cells.get(&(name, k)) {
                    Some(c) => DeltaCell {
                        k,
                        value: c.value,
                        delta: c.value.map(|v| v - baseline),
                        n: c.n,
                    },
                    None => DeltaCell {
                        k,
                        value: None,
                        delta: None,
                        n: 0,
                    },
                })
                .collect();
            (name.to_string(), row)
        })
        .collect();
    DeltaTable {
        metric,
        baseline_r0: baseline,
        k_values,
        rows,
    }
}

/// Signed two-decimal delta; values that round to zero print as `+0.00`.
pub fn format_delta(delta: Option<f64>) -> String {
    match delta {
        None => "N/A".to_string(),
        Some(d) => {
            let s = format!("{d:+.2}");
            if s == "-0.00" {
                "+0.00".to_string()
            } else {
                s
            }
        }
    }
}

impl DeltaTable {
    /// `retriever,k,delta,value,n`, one line per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("retriever,k,delta,value,n\n");
        for (name, row) in &self.rows {
            for c in row {
                let value = c.value.map_or_else(|| "N/A".to_string(), |v| format!("{v:.6}"));
                let delta = c.delta.map_or_else(|| "N/A".to_string(), |d| format!("{d:+.6}"));
                writeln!(out, "{},{},{},{},{}", csv_field(name), c.k, delta, value, c.n).unwrap();
            }
        }
        out
    }

    /// Rows are retrievers, columns are `k`, cells are signed deltas.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        write!(out, "| retriever ({}), R₀ = {:.2} |", self.metric, self.baseline_r0).unwrap();
        for k in &self.k_values {
            write!(out, " k={k} |").unwrap();
        }
        out.push_str("\n|---|");
        for _ in &self.k_values {
            out.push_str("---|");
        }
        out.push('\n');
        for (name, row) in &self.rows {
            write!(out, "| {name} |").unwrap();
            for c in row {
                write!(out, " {} |", format_delta(c.delta)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(r: &str, k: usize, v: Option<f64>) -> CellRun {
        CellRun {
            retriever: r.into(),
            k,
            value: v,
            n: 10,
        }
    }

    #[test]
    fn table_one_cell_arithmetic() {
        let t = delta_table(&[cell("tfidf", 5, Some(0.64))], 0.30, Metric::CorpusBleu);
        assert_eq!(format_delta(t.rows[0].1[0].delta), "+0.34");
        assert_eq!(t.rows[0].1[0].delta, Some(0.64 - 0.30));
    }

    #[test]
    fn zero_and_missing() {
        let t = delta_table(
            &[cell("a", 1, Some(0.3)), cell("b", 5, Some(0.2))],
            0.3,
            Metric::Accuracy,
        );
        assert_eq!(t.k_values, vec![1, 5]);
        assert_eq!(format_delta(t.rows[0].1[0].delta), "+0.00");
        assert_eq!(format_delta(t.rows[0].1[1].delta), "N/A");
        assert_eq!(format_delta(t.rows[1].1[1].delta), "-0.10");
        assert_eq!(format_delta(Some(-0.001)), "+0.00");
    }

    #[test]
    fn markdown_layout() {
        let t = delta_table(
            &[
                cell("tfidf", 1, Some(0.55)),
                cell("tfidf", 5, None),
                cell("random", 1, Some(0.25)),
            ],
            0.3,
            Metric::F1Macro,
        );
        let md = t.to_markdown();
        assert_eq!(
            md,
            "| retriever (f1_macro), R₀ = 0.30 | k=1 | k=5 |\n|---|---|---|\n| tfidf | +0.25 | N/A |\n| random | -0.05 | N/A |\n"
        );
        let csv = t.to_csv();
        assert!(csv.starts_with("retriever,k,delta,value,n\n"));
        assert!(csv.contains("tfidf,5,N/A,N/A,10\n"));
        assert!(csv.contains("random,5,N/A,N/A,0\n"));
    }
}
