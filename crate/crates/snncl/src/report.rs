//! CSV and JSON reports over completed run records.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value read back parses to the same bits.

use std::path::{Path, PathBuf};

use serde::Serialize;
use snncl_core::experiment::Mode;
use snncl_core::metrics::representation_similarity;

use crate::error::AppError;
use crate::runner::{aggregate, AggregateRow, MetricSummary, RunRecord};

/// Accuracy matrix per run, one row per task.
pub const ACCURACY_MATRIX: &str = "accuracy_matrix.csv";
/// Per-run metrics and the aggregate table.
pub const METRICS: &str = "metrics.json";
/// Accuracy of every task after every training stage, long format.
pub const LEARNING_CURVES: &str = "learning_curves.csv";
/// Mean absolute weight change per task and block.
pub const WEIGHT_CHANGE: &str = "weight_change.csv";
/// Cosine similarity of class representations.
pub const SIMILARITY: &str = "similarity.csv";

/// Per-run entry of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RunMetrics {
    /// Digest of the run inputs.
    pub config_hash: String,
    /// Configuration name.
    pub name: String,
    /// Model variant.
    pub mode: Mode,
    /// Metaplastic ceiling.
    pub m_max: f64,
    /// Constant metaplastic state, for `fixed_m`.
    pub fixed_m: Option<f64>,
    /// Master seed.
    pub seed: u64,
    /// Metrics.
    pub metrics: MetricSummary,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct MetricsFile {
    /// One entry per run.
    pub runs: Vec<RunMetrics>,
    /// Mean and standard deviation across seeds.
    pub aggregate: Vec<AggregateRow>,
}

/// Writes all five report files into `dir` and returns their paths. Fails
/// before writing anything if `records` is empty, any record is incomplete,
/// or `dir` cannot be written.
pub fn emit_report(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>, AppError> {
    if records.is_empty() {
        return Err(AppError::Data("no run records to report".into()));
    }
    if let Some(r) = records.iter().find(|r| r.metrics.is_none()) {
        return Err(AppError::Data(format!("run {} is not complete", r.config_hash)));
    }
    ensure_writable(dir)?;
    let files = [
        (ACCURACY_MATRIX, accuracy_matrix_csv(records)),
        (METRICS, metrics_json(records)),
        (LEARNING_CURVES, learning_curves_csv(records)),
        (WEIGHT_CHANGE, weight_change_csv(records)),
        (SIMILARITY, similarity_csv(records)?),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

fn ensure_writable(dir: &Path) -> Result<(), AppError> {
    let err = |e: std::io::Error| AppError::Runtime(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(err)?;
    let probe = dir.join(".write-probe");
    std::fs::write(&probe, b"").map_err(err)?;
    std::fs::remove_file(&probe).map_err(err)
}

fn run_prefix(r: &RunRecord) -> String {
    format!("{},{},{},{},{}", r.config_hash, csv_text(&r.config.name), mode_name(r.config.mode), r.m_max, r.seed)
}

fn mode_name(m: Mode) -> String {
    serde_json::to_value(m).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

const RUN_COLUMNS: &str = "config_hash,name,mode,m_max,seed";

fn accuracy_matrix_csv(records: &[RunRecord]) -> String {
    let width = records.iter().map(|r| r.progress.matrix.tasks()).max().unwrap_or(0);
    let mut out = format!("{RUN_COLUMNS},task,untrained");
    for k in 1..=width {
        out += &format!(",after_task_{k}");
    }
    out.push('\n');
    for r in records {
        let m = &r.progress.matrix;
        for t in 0..m.tasks() {
            out += &format!("{},{},{}", run_prefix(r), t + 1, opt(m.baseline(t)));
            for k in 0..width {
                out += &format!(",{}", opt(if k < m.tasks() { m.get(t, k) } else { None }));
            }
            out.push('\n');
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metrics_json(records: &[RunRecord]) -> String {
    let file = MetricsFile {
        runs: records
            .iter()
            .map(|r| RunMetrics {
                config_hash: r.config_hash.clone(),
                name: r.config.name.clone(),
                mode: r.config.mode,
                m_max: r.m_max,
                fixed_m: r.config.fixed_m,
                seed: r.seed,
                metrics: r.metrics.clone().expect("checked complete"),
            })
            .collect(),
        aggregate: aggregate(records),
    };
    serde_json::to_string_pretty(&file).expect("metrics serialize")
}

fn learning_curves_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{RUN_COLUMNS},task,after_task,accuracy\n");
    for r in records {
        let m = &r.progress.matrix;
        for t in 0..m.tasks() {
            out += &format!("{},{},0,{}\n", run_prefix(r), t + 1, opt(m.baseline(t)));
            for k in 0..m.tasks() {
                out += &format!("{},{},{},{}\n", run_prefix(r), t + 1, k + 1, opt(m.get(t, k)));
            }
        }
    }
    out
}

fn weight_change_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{RUN_COLUMNS},task,block,mean_abs_change\n");
    for r in records {
        for wc in &r.progress.weight_change {
            for (b, v) in wc.per_block.iter().enumerate() {
                out += &format!("{},{},{},{}\n", run_prefix(r), wc.task + 1, b, v);
            }
        }
    }
    out
}

/// For each class, similarity of its mean hidden activity right after the
/// task that contains it was trained and after the final task.
fn similarity_csv(records: &[RunRecord]) -> Result<String, AppError> {
    let mut out = format!("{RUN_COLUMNS},class,learned_after_task,final_task,cosine\n");
    for r in records {
        let n = r.progress.matrix.tasks();
        for (t, task) in r.config_tasks().iter().enumerate() {
            for &c in task {
                let (Some(a), Some(b)) = (r.progress.class_activity(t + 1, c), r.progress.class_activity(n, c)) else {
                    continue;
                };
                let cos = match representation_similarity(a, b) {
                    Ok(v) => v.to_string(),
                    Err(_) => String::new(),
                };
                out += &format!("{},{},{},{},{}\n", run_prefix(r), c, t + 1, n, cos);
            }
        }
    }
    Ok(out)
}

impl RunRecord {
    /// Class groups of the run's tasks.
    pub fn config_tasks(&self) -> Vec<Vec<u8>> {
        self.config.task_order().groups().unwrap_or_default()
    }
}
