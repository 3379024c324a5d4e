//! Continual-learning metrics over the accuracy matrix, memory accounting
//! and the stability/plasticity probes.
//!
//! Task indices in this module are 1-based where they name "after training
//! task k", matching how the metrics are usually written; storage is
//! 0-based.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `R[t][k]`: accuracy on task `t` after training through task `k`, plus
/// the accuracies `b[t]` of the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    n: usize,
    r: Vec<Option<f64>>,
    baseline: Vec<Option<f64>>,
}

impl AccuracyMatrix {
    /// Empty `n x n` matrix.
    pub fn new(n: usize) -> Self {
        AccuracyMatrix {
            n,
            r: vec![None; n * n],
            baseline: vec![None; n],
        }
    }

    /// Builds a matrix from complete rows `r[t][k]` and baseline `b`.
    pub fn from_rows(rows: &[Vec<f64>], baseline: &[f64]) -> Result<Self> {
        let n = rows.len();
        if baseline.len() != n {
            return Err(Error::Shape { expected: n, actual: baseline.len() });
        }
        let mut m = AccuracyMatrix::new(n);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Shape { expected: n, actual: row.len() });
            }
            for (k, &a) in row.iter().enumerate() {
                m.set(t, k, a)?;
            }
            m.set_baseline(t, baseline[t])?;
        }
        Ok(m)
    }

    /// Number of tasks.
    pub fn tasks(&self) -> usize {
        self.n
    }

    fn check(&self, task: usize, acc: f64) -> Result<()> {
        if task >= self.n {
            return Err(Error::Shape { expected: self.n, actual: task + 1 });
        }
        if !(0.0..=1.0).contains(&acc) {
            return Err(Error::Metric(format!("accuracy {acc} outside [0, 1]")));
        }
        Ok(())
    }

    /// Records the accuracy on `task` (0-based) after training `after` (0-based).
    pub fn set(&mut self, task: usize, after: usize, acc: f64) -> Result<()> {
        self.check(task, acc)?;
        self.check(after, acc)?;
        self.r[task * self.n + after] = Some(acc);
        Ok(())
    }

    /// Records the untrained accuracy of `task` (0-based).
    pub fn set_baseline(&mut self, task: usize, acc: f64) -> Result<()> {
        self.check(task, acc)?;
        self.baseline[task] = Some(acc);
        Ok(())
    }

    /// Entry for 0-based `task` and `after`.
    pub fn get(&self, task: usize, after: usize) -> Option<f64> {
        if task < self.n && after < self.n {
            self.r[task * self.n + after]
        } else {
            None
        }
    }

    /// Untrained accuracy of 0-based `task`.
    pub fn baseline(&self, task: usize) -> Option<f64> {
        self.baseline.get(task).copied().flatten()
    }

    /// Number of leading columns that are complete.
    pub fn completed_columns(&self) -> usize {
        (0..self.n)
            .take_while(|&k| (0..self.n).all(|t| self.get(t, k).is_some()))
            .count()
    }

    fn need(&self, task: usize, after: usize) -> Result<f64> {
        self.get(task, after).ok_or_else(|| {
            Error::Metric(format!("R[{}][{}] has not been measured", task + 1, after + 1))
        })
    }

    fn need_baseline(&self, task: usize) -> Result<f64> {
        self.baseline(task)
            .ok_or_else(|| Error::Metric(format!("baseline of task {} missing", task + 1)))
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.n {
            return Err(Error::Metric(format!("task index {k} outside 1..={}", self.n)));
        }
        Ok(())
    }
}

/// Which BWT formula to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BwtForm {
    /// Mean change `R[t][k] - R[t][t]` over earlier tasks.
    #[default]
    Change,
    /// Mean of `R[t][k]` over earlier tasks, without subtracting.
    AsPrinted,
}

/// Mean accuracy over tasks `1..=k` after training task `k` (1-based).
pub fn mean_accuracy(r: &AccuracyMatrix, k: usize) -> Result<f64> {
    r.check_k(k)?;
    let mut sum = 0.0;
    for t in 0..k {
        sum += r.need(t, k - 1)?;
    }
    Ok(sum / k as f64)
}

/// Backward transfer after task `k >= 2` (1-based).
pub fn backward_transfer(r: &AccuracyMatrix, k: usize, form: BwtForm) -> Result<f64> {
    r.check_k(k)?;
    if k < 2 {
        return Err(Error::Metric("backward transfer needs at least two tasks".into()));
    }
    let mut sum = 0.0;
    for t in 0..k - 1 {
        let now = r.need(t, k - 1)?;
        sum += match form {
            BwtForm::Change => now - r.need(t, t)?,
            BwtForm::AsPrinted => now,
        };
    }
    Ok(sum / (k - 1) as f64)
}

/// Forward transfer after task `k < N` (1-based): mean gain of the
/// not-yet-trained tasks over the untrained baseline.
pub fn forward_transfer(r: &AccuracyMatrix, k: usize) -> Result<f64> {
    r.check_k(k)?;
    let n = r.tasks();
    if k == n {
        return Err(Error::Metric("forward transfer is undefined after the last task".into()));
    }
    let mut sum = 0.0;
    for t in k..n {
        sum += r.need(t, k - 1)? - r.need_baseline(t)?;
    }
    Ok(sum / (n - k) as f64)
}

/// Persistent per-synapse and per-neuron state kept by a model variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersistentState {
    /// Synapses carry a reference weight.
    pub reference_weight: bool,
    /// Synapses carry a metaplastic state (and neurons an activity trace).
    pub metaplastic_state: bool,
}

/// Storage cost of one weight, the unit of the ledger.
pub const WEIGHT_COST: f64 = 1.0;
/// A reference weight needs the same precision as the weight.
pub const REFERENCE_COST: f64 = 1.0;
/// The metaplastic state is a bounded, slowly stepped value stored at half
/// precision.
pub const METAPLASTIC_COST: f64 = 0.5;
/// One activity trace per neuron.
pub const TRACE_COST: f64 = 1.0;

/// Per-task memory use against the baseline model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryLedger {
    /// Memory held while learning each task.
    pub per_task: Vec<f64>,
    /// Memory of the baseline model (weights only).
    pub baseline: f64,
}

impl MemoryLedger {
    /// Ledger for a fixed-size network over `tasks` tasks. Transient
    /// per-step variables (membrane, current, error compartment) are not
    /// counted.
    pub fn for_network(layer_sizes: &[usize], state: PersistentState, tasks: usize) -> Self {
        let synapses: usize = layer_sizes.windows(2).map(|w| w[0] * w[1]).sum();
        let neurons: usize = layer_sizes.iter().sum();
        let mut per_synapse = WEIGHT_COST;
        let mut per_network = 0.0;
        if state.reference_weight {
            per_synapse += REFERENCE_COST;
        }
        if state.metaplastic_state {
            per_synapse += METAPLASTIC_COST;
            per_network += TRACE_COST * neurons as f64;
        }
        let mem = per_synapse * synapses as f64 + per_network;
        MemoryLedger {
            per_task: vec![mem; tasks],
            baseline: WEIGHT_COST * synapses as f64,
        }
    }
}

/// Mean per-task memory in units of the baseline model (no upper clamp).
pub fn memory_overhead(ledger: &MemoryLedger) -> Result<f64> {
    if !(ledger.baseline > 0.0) || ledger.per_task.is_empty() {
        return Err(Error::Metric("memory ledger needs a positive baseline and tasks".into()));
    }
    let n = ledger.per_task.len() as f64;
    Ok(ledger.per_task.iter().map(|m| m / ledger.baseline).sum::<f64>() / n)
}

/// Cosine similarity of two activity vectors.
pub fn representation_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape { expected: a.len(), actual: b.len() });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum::<f64>());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum::<f64>());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Metric("cosine similarity of a zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean absolute weight change of block `layer` between two snapshots.
pub fn mean_weight_change(before: &[Vec<f64>], after: &[Vec<f64>], layer: usize) -> Result<f64> {
    let (b, a) = match (before.get(layer), after.get(layer)) {
        (Some(b), Some(a)) => (b, a),
        _ => return Err(Error::Metric(format!("weight block {layer} missing from snapshot"))),
    };
    if a.len() != b.len() {
        return Err(Error::Shape { expected: b.len(), actual: a.len() });
    }
    if a.is_empty() {
        return Err(Error::Metric("empty weight block".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| libm::fabs(x - y)).sum::<f64>() / a.len() as f64)
}
