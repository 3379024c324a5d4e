//! In-memory image datasets and domain-incremental task sequences.
//!
//! Tasks share one output head: the classes of each task are mapped onto
//! output neurons by position, so `{2, 3}` trains neuron 0 on digit 2 and
//! neuron 1 on digit 3.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed::{SeedStreams, Stream};
use crate::{Error, Result};

/// Grayscale images with integer class labels. Pixels are stored as bytes
/// and exposed as intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    /// Wraps raw pixel bytes (`n * rows * cols`) and `n` labels.
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        let per = rows * cols;
        if per == 0 {
            return Err(Error::Data("images must have at least one pixel".into()));
        }
        if pixels.len() != per * labels.len() {
            return Err(Error::Data(format!(
                "{} pixel bytes do not hold {} images of {}x{}",
                pixels.len(),
                labels.len(),
                rows,
                cols
            )));
        }
        Ok(Dataset { rows, cols, pixels, labels })
    }

    /// Number of images.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// True when there are no images.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Image height.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Image width.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Pixels per image.
    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    /// All labels.
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Label of image `i`.
    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    /// Raw bytes of image `i`.
    pub fn raw_image(&self, i: usize) -> &[u8] {
        let per = self.pixels_per_image();
        &self.pixels[i * per..(i + 1) * per]
    }

    /// Intensities of image `i`, each `byte / 255`.
    pub fn intensities(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.raw_image(i).iter().map(|&b| f64::from(b) / 255.0)
    }

    /// Distinct labels, ascending.
    pub fn classes(&self) -> Vec<u8> {
        self.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Indices of images with label `class`.
    pub fn indices_of(&self, class: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }
}

/// Class pairings used for split benchmarks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOrder {
    /// One of the five standard split-MNIST orderings (1-based).
    Preset(u8),
    /// Explicit class groups; position in a group selects the output neuron.
    Custom(Vec<Vec<u8>>),
}

/// The five split-MNIST orderings. Order 1 is the conventional split;
/// orders 2-5 rearrange digits by visual similarity.
pub const ORDER_PRESETS: [[[u8; 2]; 5]; 5] = [
    [[0, 1], [2, 3], [4, 5], [6, 7], [8, 9]],
    [[0, 1], [3, 2], [5, 4], [6, 7], [9, 8]],
    [[4, 0], [6, 8], [7, 3], [9, 2], [1, 5]],
    [[0, 5], [1, 7], [4, 6], [8, 9], [3, 2]],
    [[0, 5], [1, 8], [3, 2], [6, 4], [9, 7]],
];

impl TaskOrder {
    /// Class groups of this ordering.
    pub fn groups(&self) -> Result<Vec<Vec<u8>>> {
        match self {
            TaskOrder::Preset(k) if (1..=5).contains(k) => Ok(ORDER_PRESETS[usize::from(*k) - 1]
                .iter()
                .map(|p| p.to_vec())
                .collect()),
            TaskOrder::Preset(k) => Err(Error::Config(format!("unknown task order preset {k}"))),
            TaskOrder::Custom(g) => Ok(g.clone()),
        }
    }
}

/// One task: its classes, their output neurons and sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    /// Classes of the task; `classes[k]` trains output neuron `k`.
    pub classes: Vec<u8>,
    /// Training-set indices in presentation order.
    pub train: Vec<usize>,
    /// Test-set indices.
    pub test: Vec<usize>,
    /// Training samples available before any subsampling.
    pub full_train_len: usize,
}

impl Task {
    /// Output neuron assigned to `class`, if it belongs to the task.
    pub fn head_of(&self, class: u8) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    /// Ratio of full to actual training samples.
    pub fn exposure_ratio(&self) -> f64 {
        if self.train.is_empty() {
            1.0
        } else {
            self.full_train_len as f64 / self.train.len() as f64
        }
    }
}

/// Ordered tasks over a shared output head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSequence {
    /// Tasks in training order.
    pub tasks: Vec<Task>,
}

impl TaskSequence {
    /// Number of tasks.
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    /// True when there are no tasks.
    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Output neurons needed to host every task.
    pub fn head_width(&self) -> usize {
        self.tasks.iter().map(|t| t.classes.len()).max().unwrap_or(0)
    }
}

/// Splits `train`/`test` into tasks following `order`. Training indices of
/// each task are shuffled with the `Shuffle` stream of `seed`.
pub fn build_split_tasks(
    train: &Dataset,
    test: &Dataset,
    order: &TaskOrder,
    seed: u64,
) -> Result<TaskSequence> {
    let groups = order.groups()?;
    if groups.is_empty() {
        return Err(Error::Data("task ordering has no tasks".into()));
    }
    let streams = SeedStreams::new(seed);
    let (train_classes, test_classes) = (train.classes(), test.classes());
    let mut seen = BTreeSet::new();
    let mut tasks = Vec::with_capacity(groups.len());
    for (t, group) in groups.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::Data(format!("task {} has no classes", t + 1)));
        }
        for &c in group {
            if !seen.insert(c) {
                return Err(Error::Data(format!("class {c} appears in more than one task")));
            }
            if !train_classes.contains(&c) || !test_classes.contains(&c) {
                return Err(Error::Data(format!("class {c} is missing from the dataset")));
            }
        }
        let in_task = |ds: &Dataset| -> Vec<usize> {
            (0..ds.len()).filter(|&i| group.contains(&ds.label(i))).collect()
        };
        let mut train_idx = in_task(train);
        train_idx.shuffle(&mut streams.rng(Stream::Shuffle, t as u64, 0));
        let full_train_len = train_idx.len();
        tasks.push(Task {
            classes: group.clone(),
            train: train_idx,
            test: in_task(test),
            full_train_len,
        });
    }
    Ok(TaskSequence { tasks })
}

/// Class-balanced, seeded subsample of `samples_per_task` training indices
/// for every task. Test indices are untouched. Requesting the full size
/// returns the sequence unchanged.
pub fn reduced_subset(
    sequence: &TaskSequence,
    train: &Dataset,
    samples_per_task: usize,
    seed: u64,
) -> Result<TaskSequence> {
    let streams = SeedStreams::new(seed);
    let mut out = sequence.clone();
    for (t, task) in out.tasks.iter_mut().enumerate() {
        if samples_per_task > task.train.len() {
            return Err(Error::Data(format!(
                "task {} has {} training samples, {} requested",
                t + 1,
                task.train.len(),
                samples_per_task
            )));
        }
        if samples_per_task == task.train.len() {
            continue;
        }
        let k = task.classes.len();
        let mut rng = streams.rng(Stream::Subset, t as u64, 0);
        let mut picked = Vec::with_capacity(samples_per_task);
        for (c_pos, &class) in task.classes.iter().enumerate() {
            let quota = samples_per_task / k + usize::from(c_pos < samples_per_task % k);
            let mut pool: Vec<usize> = task.train.iter().copied().filter(|&i| train.label(i) == class).collect();
            if quota > pool.len() {
                return Err(Error::Data(format!(
                    "class {class} has {} training samples, {quota} requested",
                    pool.len()
                )));
            }
            pool.shuffle(&mut rng);
            picked.extend_from_slice(&pool[..quota]);
        }
        picked.shuffle(&mut rng);
        task.train = picked;
    }
    Ok(out)
}
