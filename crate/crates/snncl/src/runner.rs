//! Running configured experiments with persistent, resumable records.
//!
//! Each run lives in `output_dir/<config hash>/` with `record.json` (updated
//! after every task) and the latest model checkpoint. Re-running the same
//! configuration continues from the last completed task.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use snncl_core::dataset::{build_split_tasks, reduced_subset, Dataset, TaskSequence};
use snncl_core::experiment::{Mode, Progress, Session};
use snncl_core::metrics::{
    backward_transfer, forward_transfer, mean_accuracy, memory_overhead, AccuracyMatrix, BwtForm,
    MemoryLedger,
};
use snncl_core::network::NetworkModel;
use snncl_core::seed::SeedStreams;

use crate::checkpoint;
use crate::config::{DataPaths, ExperimentConfig};
use crate::error::AppError;
use crate::idx::load_idx;

/// File name of a run's record inside its directory.
pub const RECORD_FILE: &str = "record.json";

/// Training and test images.
#[derive(Debug, Clone, PartialEq)]
pub struct Datasets {
    /// Training split.
    pub train: Dataset,
    /// Test split.
    pub test: Dataset,
}

impl Datasets {
    /// Loads both splits.
    pub fn load(paths: &DataPaths) -> Result<Self, AppError> {
        Ok(Datasets {
            train: load_idx(&paths.train_images, &paths.train_labels)?,
            test: load_idx(&paths.test_images, &paths.test_labels)?,
        })
    }
}

/// Loads each distinct set of dataset files once.
#[derive(Debug, Default)]
pub struct DataCache {
    loaded: HashMap<DataPaths, Arc<Datasets>>,
}

impl DataCache {
    /// Datasets for `cfg`, loading them on first use.
    pub fn get(&mut self, cfg: &ExperimentConfig) -> Result<Arc<Datasets>, AppError> {
        let paths = cfg.data_paths();
        if let Some(d) = self.loaded.get(&paths) {
            return Ok(d.clone());
        }
        let d = Arc::new(Datasets::load(&paths)?);
        self.loaded.insert(paths, d.clone());
        Ok(d)
    }
}

/// Lifecycle of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Tasks remain.
    Running,
    /// Every task trained and evaluated.
    Complete,
    /// Aborted with the given message.
    Failed(String),
}

/// Continual-learning summary of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Mean accuracy over all tasks after the last task.
    pub mean_accuracy: f64,
    /// Backward transfer after the last task, change form. Needs two tasks.
    pub backward_transfer: Option<f64>,
    /// Backward transfer after the last task, alternative printed form.
    pub backward_transfer_as_printed: Option<f64>,
    /// Forward transfer averaged over every task but the last.
    pub forward_transfer: Option<f64>,
    /// Mean accuracy over tasks `1..=k` after each task `k`.
    pub mean_accuracy_by_task: Vec<f64>,
    /// Backward transfer after each task `k >= 2`.
    pub backward_transfer_by_task: Vec<f64>,
    /// Forward transfer after each task `k < N`.
    pub forward_transfer_by_task: Vec<f64>,
    /// Memory relative to the plain model.
    pub memory_overhead: f64,
    /// Accuracy on the last task right after training it.
    pub final_task_accuracy: f64,
}

impl MetricSummary {
    /// Metrics of a complete accuracy matrix.
    pub fn compute(matrix: &AccuracyMatrix, mode: Mode, layer_sizes: &[usize]) -> Result<Self, AppError> {
        let n = matrix.tasks();
        let ledger = MemoryLedger::for_network(layer_sizes, mode.persistent_state(), n);
        let mean_accuracy_by_task = (1..=n).map(|k| mean_accuracy(matrix, k)).collect::<Result<Vec<_>, _>>()?;
        let backward_transfer_by_task =
            (2..=n).map(|k| backward_transfer(matrix, k, BwtForm::Change)).collect::<Result<Vec<_>, _>>()?;
        let forward_transfer_by_task = (1..n).map(|k| forward_transfer(matrix, k)).collect::<Result<Vec<_>, _>>()?;
        let forward_transfer = match forward_transfer_by_task.len() {
            0 => None,
            len => Some(forward_transfer_by_task.iter().sum::<f64>() / len as f64),
        };
        Ok(MetricSummary {
            mean_accuracy: mean_accuracy(matrix, n)?,
            backward_transfer: backward_transfer_by_task.last().copied(),
            backward_transfer_as_printed: if n >= 2 { Some(backward_transfer(matrix, n, BwtForm::AsPrinted)?) } else { None },
            forward_transfer,
            mean_accuracy_by_task,
            backward_transfer_by_task,
            forward_transfer_by_task,
            memory_overhead: memory_overhead(&ledger)?,
            final_task_accuracy: matrix
                .get(n - 1, n - 1)
                .ok_or_else(|| AppError::Runtime("accuracy matrix incomplete".into()))?,
        })
    }
}

/// Persistent record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Digest of the run inputs.
    pub config_hash: String,
    /// Single-seed, single-ceiling configuration.
    pub config: ExperimentConfig,
    /// Master seed.
    pub seed: u64,
    /// Metaplastic ceiling.
    pub m_max: f64,
    /// Layer sizes, input first.
    pub layer_sizes: Vec<usize>,
    /// Lifecycle state.
    pub status: RunStatus,
    /// Accuracy matrix, per-task logs and probes.
    pub progress: Progress,
    /// Summary, present once complete.
    pub metrics: Option<MetricSummary>,
    /// Checkpoint files in the run directory, oldest first.
    pub checkpoints: Vec<String>,
    /// Wall-clock seconds spent, summed over sessions.
    pub wall_clock_s: f64,
    /// Simulation steps with learning on.
    pub train_steps: u64,
    /// Simulation steps spent on evaluation.
    pub eval_steps: u64,
}

impl RunRecord {
    /// Reads `record.json` from a run directory.
    pub fn load(dir: &Path) -> Result<Self, AppError> {
        let path = dir.join(RECORD_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
    }

    /// Writes `record.json` into `dir` atomically.
    pub fn save(&self, dir: &Path) -> Result<(), AppError> {
        let path = dir.join(RECORD_FILE);
        let tmp = dir.join(format!("{RECORD_FILE}.tmp"));
        let err = |e: &dyn std::fmt::Display| AppError::Runtime(format!("{}: {e}", path.display()));
        let text = serde_json::to_string_pretty(self).map_err(|e| err(&e))?;
        std::fs::write(&tmp, text).map_err(|e| err(&e))?;
        std::fs::rename(&tmp, &path).map_err(|e| err(&e))
    }

    /// Whether every task has been trained.
    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }
}

/// Knobs that do not change results.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Keep a checkpoint after every task instead of only the latest.
    pub keep_all_checkpoints: bool,
    /// Stop (status stays running) once this many tasks are done.
    pub stop_after: Option<usize>,
    /// Print one line per task to stderr.
    pub verbose: bool,
}

/// Directory of a run.
pub fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join(cfg.hash())
}

fn checkpoint_name(tasks_done: usize) -> String {
    format!("after_task_{tasks_done:02}.ckpt")
}

/// Task sequence of a single-run configuration.
pub fn build_tasks(cfg: &ExperimentConfig, data: &Datasets) -> Result<TaskSequence, AppError> {
    let seed = single_seed(cfg)?;
    let mut seq = build_split_tasks(&data.train, &data.test, &cfg.task_order(), seed)?;
    if let Some(n) = cfg.samples_per_task {
        seq = reduced_subset(&seq, &data.train, n, seed)?;
    }
    if let Some(n) = cfg.data.test_per_task {
        seq.tasks.iter_mut().for_each(|t| t.test.truncate(n));
    }
    Ok(seq)
}

fn single_seed(cfg: &ExperimentConfig) -> Result<u64, AppError> {
    match (cfg.seeds.as_slice(), cfg.m_max_sweep.len()) {
        ([s], 0) => Ok(*s),
        _ => Err(AppError::Config("a single run needs exactly one seed and no m_max sweep".into())),
    }
}

/// Untrained model for a single-run configuration.
pub fn build_model(cfg: &ExperimentConfig, data: &Datasets, tasks: &TaskSequence) -> Result<NetworkModel, AppError> {
    let seed = single_seed(cfg)?;
    let net = cfg.network_config(&[data.train.pixels_per_image(), tasks.head_width()], seed, cfg.plasticity.m_max)?;
    Ok(NetworkModel::build(net)?)
}

/// Runs (or resumes) one configuration. A failure after the record exists
/// leaves it on disk marked failed.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Datasets, opts: RunOptions) -> Result<RunRecord, AppError> {
    let seed = single_seed(cfg)?;
    cfg.validate()?;
    let tasks = build_tasks(cfg, data)?;
    let dir = run_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| AppError::Runtime(format!("{}: {e}", dir.display())))?;
    let session = Session {
        train: &data.train,
        test: &data.test,
        tasks: &tasks,
        protocol: cfg.protocol(),
        streams: SeedStreams::new(seed),
    };
    let started = Instant::now();

    let (mut model, mut record) = match resume_point(&dir, cfg)? {
        Some((model, record)) => (model, record),
        None => {
            let model = build_model(cfg, data, &tasks)?;
            let progress = session.begin(&model)?;
            let record = RunRecord {
                config_hash: cfg.hash(),
                config: cfg.clone(),
                seed,
                m_max: cfg.plasticity.m_max,
                layer_sizes: model.config().layer_sizes(),
                status: RunStatus::Running,
                progress,
                metrics: None,
                checkpoints: Vec::new(),
                wall_clock_s: 0.0,
                train_steps: 0,
                eval_steps: eval_steps(&session),
            };
            (model, record)
        }
    };
    if record.is_complete() {
        return Ok(record);
    }
    record.status = RunStatus::Running;
    let base_clock = record.wall_clock_s;
    let result = drive(&session, cfg, &dir, &mut model, &mut record, opts, || {
        base_clock + started.elapsed().as_secs_f64()
    });
    if let Err(e) = &result {
        record.wall_clock_s = base_clock + started.elapsed().as_secs_f64();
        record.status = RunStatus::Failed(e.to_string());
        record.save(&dir)?;
    }
    result.map(|_| record)
}

fn eval_steps(session: &Session<'_>) -> u64 {
    let per = (session.protocol.eval_duration / session.protocol.encoder.dt).round() as u64;
    session.tasks.tasks.iter().map(|t| t.test.len() as u64).sum::<u64>() * per
}

fn drive(
    session: &Session<'_>,
    cfg: &ExperimentConfig,
    dir: &Path,
    model: &mut NetworkModel,
    record: &mut RunRecord,
    opts: RunOptions,
    clock: impl Fn() -> f64,
) -> Result<(), AppError> {
    let n = session.tasks.len();
    if record.checkpoints.is_empty() {
        save_checkpoint(dir, model, record, opts)?;
    }
    record.wall_clock_s = clock();
    record.save(dir)?;
    while record.progress.tasks_done < n {
        if opts.stop_after.is_some_and(|s| record.progress.tasks_done >= s) {
            return Ok(());
        }
        let t0 = Instant::now();
        session.advance(model, &mut record.progress)?;
        let done = record.progress.tasks_done;
        record.train_steps += record.progress.logs[done - 1].steps as u64;
        record.eval_steps += eval_steps(session);
        save_checkpoint(dir, model, record, opts)?;
        if done == n {
            record.metrics = Some(MetricSummary::compute(&record.progress.matrix, cfg.mode, &record.layer_sizes)?);
            record.status = RunStatus::Complete;
        }
        record.wall_clock_s = clock();
        record.save(dir)?;
        if opts.verbose {
            let col: Vec<String> = (0..n)
                .map(|t| format!("{:.3}", record.progress.matrix.get(t, done - 1).unwrap_or(f64::NAN)))
                .collect();
            eprintln!(
                "[{} seed {} m_max {}] task {done}/{n} done in {:.1}s: {}",
                cfg.name,
                record.seed,
                record.m_max,
                t0.elapsed().as_secs_f64(),
                col.join(" ")
            );
        }
    }
    Ok(())
}

fn save_checkpoint(dir: &Path, model: &NetworkModel, record: &mut RunRecord, opts: RunOptions) -> Result<(), AppError> {
    let name = checkpoint_name(record.progress.tasks_done);
    checkpoint::save(model, &dir.join(&name))?;
    if !opts.keep_all_checkpoints {
        for old in record.checkpoints.drain(..) {
            if old != name {
                let _ = std::fs::remove_file(dir.join(old));
            }
        }
    }
    record.checkpoints.retain(|c| c != &name);
    record.checkpoints.push(name);
    Ok(())
}

/// Loads an unfinished (or finished) run from `dir` if its record and the
/// checkpoint matching its progress are present.
fn resume_point(dir: &Path, cfg: &ExperimentConfig) -> Result<Option<(NetworkModel, RunRecord)>, AppError> {
    if !dir.join(RECORD_FILE).exists() {
        return Ok(None);
    }
    let record = RunRecord::load(dir)?;
    if record.config_hash != cfg.hash() {
        return Err(AppError::Data(format!("{} belongs to another configuration", dir.display())));
    }
    let name = checkpoint_name(record.progress.tasks_done);
    if !record.checkpoints.contains(&name) || !dir.join(&name).exists() {
        return Ok(None);
    }
    let model = checkpoint::load(&dir.join(name))?;
    Ok(Some((model, record)))
}

/// Mean and sample standard deviation of a metric across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    /// Mean.
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub std: f64,
}

impl Spread {
    /// Summary of `values`; `None` when empty.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Spread { mean, std })
    }
}

/// Metrics of one configuration aggregated across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    /// Configuration name.
    pub name: String,
    /// Model variant.
    pub mode: Mode,
    /// Metaplastic ceiling.
    pub m_max: f64,
    /// Constant metaplastic state, for `fixed_m`.
    pub fixed_m: Option<f64>,
    /// Completed runs aggregated.
    pub runs: usize,
    /// Mean accuracy.
    pub mean_accuracy: Spread,
    /// Backward transfer; absent for single-task sequences.
    pub backward_transfer: Option<Spread>,
    /// Forward transfer; absent for single-task sequences.
    pub forward_transfer: Option<Spread>,
    /// Accuracy on the last task right after training it.
    pub final_task_accuracy: Spread,
    /// Memory overhead (identical across seeds).
    pub memory_overhead: f64,
}

/// Groups complete records by (name, mode, m_max, fixed_m), in order of
/// first appearance.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut rows: Vec<(AggregateRow, Vec<&MetricSummary>)> = Vec::new();
    for r in records {
        let Some(m) = &r.metrics else { continue };
        let key = |row: &AggregateRow| {
            row.name == r.config.name && row.mode == r.config.mode && row.m_max == r.m_max && row.fixed_m == r.config.fixed_m
        };
        match rows.iter_mut().find(|(row, _)| key(row)) {
            Some((_, ms)) => ms.push(m),
            None => {
                let zero = Spread { mean: 0.0, std: 0.0 };
                let row = AggregateRow {
                    name: r.config.name.clone(),
                    mode: r.config.mode,
                    m_max: r.m_max,
                    fixed_m: r.config.fixed_m,
                    runs: 0,
                    mean_accuracy: zero,
                    backward_transfer: None,
                    forward_transfer: None,
                    final_task_accuracy: zero,
                    memory_overhead: m.memory_overhead,
                };
                rows.push((row, vec![m]));
            }
        }
    }
    rows.into_iter()
        .map(|(mut row, ms)| {
            let spread = |f: fn(&MetricSummary) -> f64| {
                Spread::of(&ms.iter().map(|m| f(m)).collect::<Vec<_>>()).expect("group is non-empty")
            };
            row.runs = ms.len();
            row.mean_accuracy = spread(|m| m.mean_accuracy);
            let optional = |f: fn(&MetricSummary) -> Option<f64>| {
                Spread::of(&ms.iter().filter_map(|m| f(m)).collect::<Vec<_>>())
            };
            row.backward_transfer = optional(|m| m.backward_transfer);
            row.forward_transfer = optional(|m| m.forward_transfer);
            row.final_task_accuracy = spread(|m| m.final_task_accuracy);
            row
        })
        .collect()
}

/// Result of a sweep: complete records, failures, and the aggregate table.
#[derive(Debug)]
pub struct SweepOutcome {
    /// Records of runs that finished.
    pub records: Vec<RunRecord>,
    /// Runs that failed: config hash and error.
    pub failures: Vec<(String, AppError)>,
    /// Aggregated metrics per configuration.
    pub aggregate: Vec<AggregateRow>,
}

/// Runs every (m_max, seed) expansion of every configuration. Runs are
/// independent and executed on the rayon pool; one run's failure does not
/// stop the others.
pub fn sweep(configs: &[ExperimentConfig], opts: RunOptions) -> Result<SweepOutcome, AppError> {
    if configs.is_empty() {
        return Err(AppError::Config("sweep needs at least one configuration".into()));
    }
    let mut cache = DataCache::default();
    let mut jobs = Vec::new();
    let mut failures = Vec::new();
    for cfg in configs {
        for run in cfg.expand() {
            match cache.get(&run) {
                Ok(data) => jobs.push((run, data)),
                Err(e) => failures.push((run.hash(), e)),
            }
        }
    }
    let results: Vec<(String, Result<RunRecord, AppError>)> = jobs
        .par_iter()
        .map(|(cfg, data)| (cfg.hash(), run_experiment(cfg, data, opts)))
        .collect();
    let mut records = Vec::new();
    for (hash, r) in results {
        match r {
            Ok(rec) if rec.is_complete() => records.push(rec),
            Ok(_) => {}
            Err(e) => failures.push((hash, e)),
        }
    }
    let aggregate = aggregate(&records);
    Ok(SweepOutcome { records, failures, aggregate })
}

/// Loads every `record.json` found directly in `dir` or one level below.
pub fn collect_records(dir: &Path) -> Result<Vec<RunRecord>, AppError> {
    if dir.join(RECORD_FILE).exists() {
        return Ok(vec![RunRecord::load(dir)?]);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| AppError::Data(format!("{}: {e}", dir.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(RECORD_FILE).exists())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| RunRecord::load(d)).collect()
}
