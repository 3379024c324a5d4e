//! Training and evaluation protocol over a task sequence.
//!
//! For each task, every training sample is presented once per epoch for
//! `sample_duration` ms with learning on, followed by the sample-boundary
//! update. After each task all tasks' test sets are scored with learning
//! off on a copy of the model, filling one column of the accuracy matrix.
//!
//! All randomness is drawn from per-sample streams of the master seed, so a
//! run can stop after any task and resume from a model checkpoint with
//! identical results.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TaskSequence};
use crate::encoding::{LabelEncoder, PoissonEncoder, SpikeEncoderConfig};
use crate::metrics::{mean_weight_change, AccuracyMatrix, PersistentState};
use crate::network::{argmax_lowest, MetaplasticMode, NetworkConfig, NetworkModel};
use crate::seed::{SeedStreams, Stream};
use crate::{Error, Result};

/// Model variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Metaplasticity, consolidation and heterosynaptic decay.
    #[default]
    Tacos,
    /// Constant metaplastic state with consolidation.
    FixedM,
    /// Plain error-driven learning.
    Baseline,
    /// Metaplasticity without heterosynaptic decay.
    MetaplasticityOnly,
    /// Heterosynaptic decay towards reference weights, no metaplasticity.
    ConsolidationOnly,
}

impl Mode {
    /// Adjusts `config` for this variant. `fixed_m` is required by `FixedM`.
    pub fn apply(self, config: &mut NetworkConfig, fixed_m: Option<f64>) -> Result<()> {
        match self {
            Mode::Tacos => {}
            Mode::FixedM => {
                let m = fixed_m.ok_or_else(|| Error::Config("fixed_m mode needs a constant m".into()))?;
                config.metaplastic = MetaplasticMode::Fixed(m);
            }
            Mode::Baseline => {
                for p in &mut config.plasticity {
                    p.alpha = 0.0;
                    p.delta_m = 0.0;
                }
                config.metaplastic = MetaplasticMode::Dynamic;
            }
            Mode::MetaplasticityOnly => config.plasticity.iter_mut().for_each(|p| p.alpha = 0.0),
            Mode::ConsolidationOnly => {
                config.plasticity.iter_mut().for_each(|p| p.delta_m = 0.0);
                config.metaplastic = MetaplasticMode::Dynamic;
            }
        }
        Ok(())
    }

    /// Learned state the variant has to keep.
    pub fn persistent_state(self) -> PersistentState {
        let (reference_weight, metaplastic_state) = match self {
            Mode::Tacos | Mode::FixedM => (true, true),
            Mode::Baseline => (false, false),
            Mode::MetaplasticityOnly => (false, true),
            Mode::ConsolidationOnly => (true, false),
        };
        PersistentState { reference_weight, metaplastic_state }
    }
}

/// Presentation settings shared by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    /// Encoder rates and sample duration.
    pub encoder: SpikeEncoderConfig,
    /// Presentation time during evaluation (ms).
    pub eval_duration: f64,
    /// Passes over each task's training set.
    pub epochs: usize,
    /// Scale metaplastic increments and consolidation rate by
    /// full / actual training-set size.
    pub scale_plasticity: bool,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            encoder: SpikeEncoderConfig::default(),
            eval_duration: 100.0,
            epochs: 1,
            scale_plasticity: true,
        }
    }
}

impl Protocol {
    fn eval_steps(&self) -> usize {
        libm::round(self.eval_duration / self.encoder.dt) as usize
    }
}

/// Counters from training one task.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskLog {
    /// 0-based task index.
    pub task: usize,
    /// Samples presented.
    pub samples: usize,
    /// Simulation steps run.
    pub steps: usize,
    /// Output spikes emitted.
    pub output_spikes: u64,
    /// Error neuron spikes (both signs).
    pub error_spikes: u64,
    /// Exposure scale in effect.
    pub exposure_scale: f64,
}

/// Mean hidden activity for one class at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassActivity {
    /// Tasks trained so far (0 = untrained).
    pub after_task: usize,
    /// Class label.
    pub class: u8,
    /// Mean hidden spike count per neuron over the class's test samples.
    pub mean_hidden: Vec<f64>,
}

/// Test-set result for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvaluation {
    /// 0-based task index.
    pub task: usize,
    /// Correct predictions.
    pub correct: usize,
    /// Test samples.
    pub total: usize,
    /// Mean hidden activity per class of the task.
    pub activity: Vec<(u8, Vec<f64>)>,
}

impl TaskEvaluation {
    /// Fraction correct.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Mean absolute weight change per block while training one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightChange {
    /// 0-based task index.
    pub task: usize,
    /// One value per weight block.
    pub per_block: Vec<f64>,
}

/// Everything accumulated by a run so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Tasks completed.
    pub tasks_done: usize,
    /// Accuracy matrix, filled column by column.
    pub matrix: AccuracyMatrix,
    /// Training counters per task.
    pub logs: Vec<TaskLog>,
    /// Hidden activity per class after each checkpoint.
    pub activity: Vec<ClassActivity>,
    /// Weight change per task.
    pub weight_change: Vec<WeightChange>,
}

/// Datasets, tasks, protocol and seed of one run.
#[derive(Debug, Clone, Copy)]
pub struct Session<'a> {
    /// Training images.
    pub train: &'a Dataset,
    /// Test images.
    pub test: &'a Dataset,
    /// Task sequence.
    pub tasks: &'a TaskSequence,
    /// Presentation settings.
    pub protocol: Protocol,
    /// Seed fan-out for encoding streams.
    pub streams: SeedStreams,
}

impl<'a> Session<'a> {
    /// Checks that the model and the datasets fit together.
    pub fn check(&self, model: &NetworkModel) -> Result<()> {
        self.protocol.encoder.validate()?;
        let sizes = model.config().layer_sizes();
        if sizes[0] != self.train.pixels_per_image() || sizes[0] != self.test.pixels_per_image() {
            return Err(Error::Shape { expected: sizes[0], actual: self.train.pixels_per_image() });
        }
        if model.config().outputs() < self.tasks.head_width() {
            return Err(Error::Config(format!(
                "{} output neurons cannot host tasks of {} classes",
                model.config().outputs(),
                self.tasks.head_width()
            )));
        }
        if self.protocol.epochs == 0 || self.protocol.eval_steps() == 0 {
            return Err(Error::Config("epochs and eval_duration must be positive".into()));
        }
        Ok(())
    }

    /// Presents one training sample with learning on and closes it with the
    /// sample-boundary update.
    pub fn train_sample(&self, model: &mut NetworkModel, task: usize, epoch: usize, pos: usize) -> (u64, u64) {
        let t = &self.tasks.tasks[task];
        let idx = t.train[pos];
        let head = t.head_of(self.train.label(idx)).expect("training index outside its task");
        let minor = ((epoch as u64) << 32) | pos as u64;
        let enc = &self.protocol.encoder;
        let mut input = PoissonEncoder::new(
            self.train.intensities(idx),
            enc,
            self.streams.rng(Stream::InputEncoding, task as u64, minor),
        );
        let mut label = LabelEncoder::new(head, enc, self.streams.rng(Stream::LabelEncoding, task as u64, minor));
        let mut in_buf = vec![false; self.train.pixels_per_image()];
        let mut lab_buf = vec![false; model.config().outputs()];
        let (mut out_spikes, mut err_spikes) = (0u64, 0u64);
        for _ in 0..enc.steps_per_sample() {
            input.encode_step(&mut in_buf);
            label.encode_step(&mut lab_buf);
            out_spikes += model.step(&in_buf, &lab_buf, true).iter().filter(|s| **s).count() as u64;
            let (fp, fn_) = model.error_spikes();
            err_spikes += fp.iter().chain(fn_).filter(|s| **s).count() as u64;
        }
        model.end_of_sample(enc.sample_duration);
        (out_spikes, err_spikes)
    }

    /// Trains `task` for the configured number of epochs.
    pub fn train_task(&self, model: &mut NetworkModel, task: usize) -> TaskLog {
        let t = &self.tasks.tasks[task];
        let scale = if self.protocol.scale_plasticity { t.exposure_ratio() } else { 1.0 };
        model.set_exposure_scale(scale);
        let mut log = TaskLog { task, exposure_scale: scale, ..Default::default() };
        for epoch in 0..self.protocol.epochs {
            for pos in 0..t.train.len() {
                let (o, e) = self.train_sample(model, task, epoch, pos);
                log.output_spikes += o;
                log.error_spikes += e;
                log.samples += 1;
                log.steps += self.protocol.encoder.steps_per_sample();
            }
        }
        log
    }

    /// Scores one task's test set on a copy of `model`. Each test image uses
    /// its own evaluation stream, so scores are comparable across checkpoints.
    pub fn evaluate_task(&self, model: &NetworkModel, task: usize) -> TaskEvaluation {
        let t = &self.tasks.tasks[task];
        let mut probe = model.clone();
        let steps = self.protocol.eval_steps();
        let mut correct = 0;
        let mut sums: Vec<(u8, Vec<f64>, usize)> = t.classes.iter().map(|&c| (c, Vec::new(), 0)).collect();
        for &idx in &t.test {
            probe.reset_dynamics();
            let label = self.test.label(idx);
            let mut enc = PoissonEncoder::new(
                self.test.intensities(idx),
                &self.protocol.encoder,
                self.streams.rng(Stream::Evaluation, 0, idx as u64),
            );
            let outcome = probe.infer(&mut enc, steps);
            if Some(argmax_lowest(&outcome.output_counts)) == t.head_of(label) {
                correct += 1;
            }
            if let Some(entry) = sums.iter_mut().find(|e| e.0 == label) {
                if entry.1.is_empty() {
                    entry.1 = vec![0.0; outcome.hidden_counts.len()];
                }
                for (acc, &c) in entry.1.iter_mut().zip(&outcome.hidden_counts) {
                    *acc += f64::from(c);
                }
                entry.2 += 1;
            }
        }
        let activity = sums
            .into_iter()
            .filter(|e| e.2 > 0)
            .map(|(c, mut v, n)| {
                v.iter_mut().for_each(|x| *x /= n as f64);
                (c, v)
            })
            .collect();
        TaskEvaluation { task, correct, total: t.test.len(), activity }
    }

    /// Scores every task.
    pub fn evaluate_all(&self, model: &NetworkModel) -> Vec<TaskEvaluation> {
        (0..self.tasks.len()).map(|t| self.evaluate_task(model, t)).collect()
    }

    /// Measures the untrained model and returns an empty progress record.
    pub fn begin(&self, model: &NetworkModel) -> Result<Progress> {
        self.check(model)?;
        let n = self.tasks.len();
        let mut progress = Progress {
            tasks_done: 0,
            matrix: AccuracyMatrix::new(n),
            logs: Vec::new(),
            activity: Vec::new(),
            weight_change: Vec::new(),
        };
        for ev in self.evaluate_all(model) {
            progress.matrix.set_baseline(ev.task, ev.accuracy())?;
            record_activity(&mut progress, 0, ev);
        }
        Ok(progress)
    }

    /// Trains the next task and appends its column of accuracies.
    pub fn advance(&self, model: &mut NetworkModel, progress: &mut Progress) -> Result<()> {
        let task = progress.tasks_done;
        if task >= self.tasks.len() {
            return Err(Error::Config("all tasks already trained".into()));
        }
        let before = model.weight_snapshot();
        let log = self.train_task(model, task);
        let after = model.weight_snapshot();
        let per_block = (0..before.len())
            .map(|b| mean_weight_change(&before, &after, b))
            .collect::<Result<Vec<_>>>()?;
        progress.weight_change.push(WeightChange { task, per_block });
        progress.logs.push(log);
        for ev in self.evaluate_all(model) {
            progress.matrix.set(ev.task, task, ev.accuracy())?;
            record_activity(progress, task + 1, ev);
        }
        progress.tasks_done += 1;
        Ok(())
    }

    /// Runs every remaining task.
    pub fn run(&self, model: &mut NetworkModel) -> Result<Progress> {
        let mut progress = self.begin(model)?;
        while progress.tasks_done < self.tasks.len() {
            self.advance(model, &mut progress)?;
        }
        Ok(progress)
    }
}

fn record_activity(progress: &mut Progress, after_task: usize, ev: TaskEvaluation) {
    for (class, mean_hidden) in ev.activity {
        progress.activity.push(ClassActivity { after_task, class, mean_hidden });
    }
}

impl Progress {
    /// Mean hidden activity of `class` after `after_task` tasks.
    pub fn class_activity(&self, after_task: usize, class: u8) -> Option<&[f64]> {
        self.activity
            .iter()
            .find(|a| a.after_task == after_task && a.class == class)
            .map(|a| a.mean_hidden.as_slice())
    }
}
