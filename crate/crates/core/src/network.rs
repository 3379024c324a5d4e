//! Layered feedforward spiking network trained with error-driven random
//! backpropagation.
//!
//! Layer 0 is the input. Each following layer receives one dense block of
//! synapses from the layer before it. The output layer drives one pair of
//! error neurons per output (false positive / false negative), whose spikes
//! reach every output neuron directly and every hidden neuron through a
//! fixed random feedback matrix.
//!
//! A learning step runs in this order: currents, membranes and spikes layer
//! by layer; error current and error neurons; error compartments; weight
//! updates. A synapse is touched on a step only when its pre- or
//! postsynaptic neuron spiked, since both update terms carry a spike gate.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::SpikeSource;
use crate::neuron::{ErrorNeuronParams, ErrorNeuronState, NeuronParams, NeuronState};
use crate::plasticity::{
    combined_update, consolidate_reference, repeated_heterosynaptic, update_metaplastic_state,
    PlasticityParams, SynapseState,
};
use crate::seed::{SeedStreams, Stream};
use crate::{Error, Result};

/// How the metaplastic state evolves.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaplasticMode {
    /// Starts at 0 and grows with correlated activity.
    #[default]
    Dynamic,
    /// Pinned to a constant for every synapse.
    Fixed(f64),
}

/// When reference weights track the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsolidationSchedule {
    /// Once per sample, stepping by the sample duration.
    #[default]
    PerSample,
    /// Every learning step, stepping by `dt`.
    PerStep,
}

/// One layer: its size and neuron constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    /// Number of neurons.
    pub size: usize,
    /// Neuron constants. For the input layer only the trace fields are used.
    pub neuron: NeuronParams,
}

/// Network topology and constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Input, hidden layers, output.
    pub layers: Vec<LayerConfig>,
    /// Learning constants, one per weight block (`layers.len() - 1`).
    pub plasticity: Vec<PlasticityParams>,
    /// Error neuron constants.
    pub error_neuron: ErrorNeuronParams,
    /// Forward weights start uniform in `±init_gain / sqrt(fan_in)`.
    pub init_gain: f64,
    /// Lower bound of the feedback weight distribution.
    pub feedback_min: f64,
    /// Upper bound of the feedback weight distribution.
    pub feedback_max: f64,
    /// Metaplastic state handling.
    pub metaplastic: MetaplasticMode,
    /// Reference weight schedule.
    pub consolidation: ConsolidationSchedule,
    /// Seed for weights and feedback.
    pub seed: u64,
}

impl NetworkConfig {
    /// Default constants for the given layer sizes.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Self {
        let n = layer_sizes.len();
        let layers = layer_sizes
            .iter()
            .enumerate()
            .map(|(l, &size)| {
                let neuron = if l > 0 && l + 1 == n {
                    let tau_syn = if l == 1 { 10.0 } else { 25.0 };
                    NeuronParams { tau_syn, ..NeuronParams::OUTPUT }
                } else if l == 1 {
                    NeuronParams::INPUT_FED
                } else {
                    NeuronParams::HIDDEN
                };
                LayerConfig { size, neuron }
            })
            .collect();
        let plasticity = (0..n.saturating_sub(1))
            .map(|b| {
                if b + 2 == n {
                    PlasticityParams {
                        m_th_pre: if b == 0 { 6.0 } else { 5.0 },
                        ..PlasticityParams::HIDDEN_OUTPUT
                    }
                } else if b == 0 {
                    PlasticityParams::INPUT_HIDDEN
                } else {
                    PlasticityParams::HIDDEN_HIDDEN
                }
            })
            .collect();
        NetworkConfig {
            layers,
            plasticity,
            error_neuron: ErrorNeuronParams::default(),
            init_gain: 1.0,
            feedback_min: -1.0,
            feedback_max: 1.0,
            metaplastic: MetaplasticMode::Dynamic,
            consolidation: ConsolidationSchedule::PerSample,
            seed,
        }
    }

    /// Layer sizes, input first.
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.size).collect()
    }

    /// Number of output neurons.
    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.size)
    }

    /// Sets `m_max` on every block.
    pub fn set_m_max(&mut self, m_max: f64) {
        self.plasticity.iter_mut().for_each(|p| p.m_max = m_max);
    }

    /// Checks topology and parameter invariants.
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 3 {
            return Err(Error::Config("need input, at least one hidden and an output layer".into()));
        }
        if self.layers.iter().any(|l| l.size == 0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if self.plasticity.len() != self.layers.len() - 1 {
            return Err(Error::Shape {
                expected: self.layers.len() - 1,
                actual: self.plasticity.len(),
            });
        }
        for l in &self.layers {
            l.neuron.validate()?;
        }
        for p in &self.plasticity {
            p.validate()?;
        }
        self.error_neuron.validate()?;
        if !(self.feedback_min <= self.feedback_max) || !(self.init_gain >= 0.0) {
            return Err(Error::Config("bad weight initialization range".into()));
        }
        if let MetaplasticMode::Fixed(m) = self.metaplastic {
            if !(m >= 0.0) {
                return Err(Error::Config("fixed metaplastic state must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Dense synapse matrix, row-major `[pre][post]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightBlock {
    /// Presynaptic layer size.
    pub pre: usize,
    /// Postsynaptic layer size.
    pub post: usize,
    /// `pre * post` synapses.
    pub synapses: Vec<SynapseState>,
}

impl WeightBlock {
    /// Synapse from `pre` neuron `j` to `post` neuron `i`.
    pub fn get(&self, j: usize, i: usize) -> &SynapseState {
        &self.synapses[j * self.post + i]
    }

    /// Mutable synapse from `j` to `i`.
    pub fn get_mut(&mut self, j: usize, i: usize) -> &mut SynapseState {
        &mut self.synapses[j * self.post + i]
    }

    /// Plain weights in row-major order.
    pub fn weights(&self) -> Vec<f64> {
        self.synapses.iter().map(|s| s.w).collect()
    }
}

/// Fixed random feedback from the error neurons to one hidden layer,
/// row-major `[output][hidden]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackBlock {
    /// Output layer size.
    pub outputs: usize,
    /// Hidden layer size.
    pub hidden: usize,
    /// Weights from false-positive error neurons.
    pub fp: Vec<f64>,
    /// Weights from false-negative error neurons.
    pub fn_: Vec<f64>,
}

/// Spike counts gathered while presenting one input without learning.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InferenceOutcome {
    /// Spikes per output neuron.
    pub output_counts: Vec<u32>,
    /// Spikes per hidden neuron, hidden layers concatenated.
    pub hidden_counts: Vec<u32>,
}

/// Index of the largest count; ties go to the lowest index.
pub fn argmax_lowest(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Signed error current `S_out - L` per output neuron, in `{-1, 0, 1}`.
///
/// # Panics
/// If the two vectors differ in length.
pub fn output_error_current(out_spikes: &[bool], label_spikes: &[bool]) -> Vec<f64> {
    assert_eq!(out_spikes.len(), label_spikes.len(), "output/label length mismatch");
    out_spikes
        .iter()
        .zip(label_spikes)
        .map(|(&s, &l)| f64::from(u8::from(s)) - f64::from(u8::from(l)))
        .collect()
}

/// Full network state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkModel {
    config: NetworkConfig,
    blocks: Vec<WeightBlock>,
    feedback: Vec<FeedbackBlock>,
    /// Non-input layers; `neurons[l - 1]` is layer `l`.
    neurons: Vec<Vec<NeuronState>>,
    input_trace: Vec<f64>,
    err_fp: Vec<ErrorNeuronState>,
    err_fn: Vec<ErrorNeuronState>,
    exposure_scale: f64,
    /// Spikes of the latest step for every layer, input included.
    spikes: Vec<Vec<bool>>,
    fp_spikes: Vec<bool>,
    fn_spikes: Vec<bool>,
    /// Heterosynaptic decay owed by silent presynaptic rows, per block.
    pending: Vec<PendingDecay>,
    #[serde(skip)]
    scratch: Vec<f64>,
    #[serde(skip)]
    input_buf: Vec<bool>,
}

/// Equality of the simulated state; scratch buffers are ignored.
impl PartialEq for NetworkModel {
    fn eq(&self, o: &Self) -> bool {
        self.config == o.config
            && self.blocks == o.blocks
            && self.feedback == o.feedback
            && self.neurons == o.neurons
            && self.input_trace == o.input_trace
            && self.err_fp == o.err_fp
            && self.err_fn == o.err_fn
            && self.exposure_scale == o.exposure_scale
            && self.spikes == o.spikes
            && self.fp_spikes == o.fp_spikes
            && self.fn_spikes == o.fn_spikes
            && self.pending == o.pending
    }
}

impl NetworkModel {
    /// Builds a network: uniform fan-in scaled forward weights, `w_ref = w`,
    /// `m = 0` (or the fixed value), uniform random feedback.
    pub fn build(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let sizes = config.layer_sizes();
        let streams = SeedStreams::new(config.seed);
        let m0 = match config.metaplastic {
            MetaplasticMode::Dynamic => 0.0,
            MetaplasticMode::Fixed(m) => m,
        };
        let blocks = sizes
            .windows(2)
            .enumerate()
            .map(|(b, w)| {
                let (pre, post) = (w[0], w[1]);
                let bound = config.init_gain / libm::sqrt(pre as f64);
                let mut rng = streams.rng(Stream::Weights, b as u64, 0);
                let synapses = (0..pre * post)
                    .map(|_| {
                        let w = if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 };
                        SynapseState { m: m0, ..SynapseState::new(w) }
                    })
                    .collect();
                WeightBlock { pre, post, synapses }
            })
            .collect();
        let outputs = config.outputs();
        let feedback = (1..sizes.len() - 1)
            .map(|h| {
                let mut rng = streams.rng(Stream::Feedback, h as u64, 0);
                let (lo, hi) = (config.feedback_min, config.feedback_max);
                let mut draw = |n: usize| -> Vec<f64> {
                    (0..n).map(|_| if hi > lo { rng.gen_range(lo..hi) } else { lo }).collect()
                };
                let fp = draw(outputs * sizes[h]);
                let fn_ = draw(outputs * sizes[h]);
                FeedbackBlock { outputs, hidden: sizes[h], fp, fn_ }
            })
            .collect();
        let neurons = config.layers[1..]
            .iter()
            .map(|l| vec![NeuronState::at_rest(&l.neuron); l.size])
            .collect();
        Ok(NetworkModel {
            blocks,
            feedback,
            neurons,
            input_trace: vec![0.0; sizes[0]],
            err_fp: vec![ErrorNeuronState::default(); outputs],
            err_fn: vec![ErrorNeuronState::default(); outputs],
            exposure_scale: 1.0,
            spikes: sizes.iter().map(|&n| vec![false; n]).collect(),
            fp_spikes: vec![false; outputs],
            fn_spikes: vec![false; outputs],
            pending: sizes
                .windows(2)
                .map(|w| PendingDecay { post_count: vec![0; w[1]], stamp: vec![0; w[0] * w[1]] })
                .collect(),
            scratch: Vec::new(),
            input_buf: Vec::new(),
            config,
        })
    }

    /// Configuration the model was built from.
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Weight blocks, input side first.
    pub fn blocks(&self) -> &[WeightBlock] {
        &self.blocks
    }

    /// Mutable weight blocks.
    pub fn blocks_mut(&mut self) -> &mut [WeightBlock] {
        &mut self.blocks
    }

    /// Feedback matrices, one per hidden layer.
    pub fn feedback(&self) -> &[FeedbackBlock] {
        &self.feedback
    }

    /// Neuron states of layer `l >= 1`.
    pub fn layer(&self, l: usize) -> &[NeuronState] {
        &self.neurons[l - 1]
    }

    /// Mutable neuron states of layer `l >= 1`.
    pub fn layer_mut(&mut self, l: usize) -> &mut [NeuronState] {
        &mut self.neurons[l - 1]
    }

    /// Activity traces of layer `l` (0 is the input).
    pub fn traces(&self, l: usize) -> Vec<f64> {
        if l == 0 {
            self.input_trace.clone()
        } else {
            self.neurons[l - 1].iter().map(|n| n.trace).collect()
        }
    }

    /// Mutable input traces.
    pub fn input_traces_mut(&mut self) -> &mut [f64] {
        &mut self.input_trace
    }

    /// Spikes of layer `l` on the latest step.
    pub fn spikes(&self, l: usize) -> &[bool] {
        &self.spikes[l]
    }

    /// Error neuron spikes (false positive, false negative) of the latest
    /// learning step.
    pub fn error_spikes(&self) -> (&[bool], &[bool]) {
        (&self.fp_spikes, &self.fn_spikes)
    }

    /// Multiplier applied to the metaplastic increment and the consolidation
    /// rate (reduced-data scaling). 1 by default.
    pub fn exposure_scale(&self) -> f64 {
        self.exposure_scale
    }

    /// Sets the exposure multiplier.
    pub fn set_exposure_scale(&mut self, scale: f64) {
        self.exposure_scale = scale;
    }

    /// Weights of every block.
    pub fn weight_snapshot(&self) -> Vec<Vec<f64>> {
        self.blocks.iter().map(WeightBlock::weights).collect()
    }

    /// Per-neuron error signals `E` for every non-input layer given error
    /// neuron spikes. Output neurons get `fp - fn`; hidden neurons get the
    /// feedback-weighted difference.
    pub fn error_signals(&self, fp_spikes: &[bool], fn_spikes: &[bool]) -> Vec<Vec<f64>> {
        let outputs = self.config.outputs();
        assert!(fp_spikes.len() == outputs && fn_spikes.len() == outputs);
        let mut out = Vec::with_capacity(self.neurons.len());
        for fb in &self.feedback {
            let mut e = vec![0.0; fb.hidden];
            feedback_signal(fb, fp_spikes, fn_spikes, &mut e);
            out.push(e);
        }
        out.push(
            fp_spikes
                .iter()
                .zip(fn_spikes)
                .map(|(&p, &n)| f64::from(u8::from(p)) - f64::from(u8::from(n)))
                .collect(),
        );
        out
    }

    /// Advances one time step and returns the output spikes. With
    /// `learning == false` the error path is skipped and no synapse changes;
    /// `label_spikes` is then ignored.
    ///
    /// # Panics
    /// If the input (or, when learning, the label) length is wrong.
    pub fn step(&mut self, input_spikes: &[bool], label_spikes: &[bool], learning: bool) -> &[bool] {
        assert_eq!(input_spikes.len(), self.input_trace.len(), "input length mismatch");
        self.forward(input_spikes);
        if learning {
            assert_eq!(label_spikes.len(), self.config.outputs(), "label length mismatch");
            self.error_path(label_spikes);
            self.apply_plasticity();
            if self.config.consolidation == ConsolidationSchedule::PerStep {
                self.settle();
                let dt_s = self.config.layers[0].neuron.dt / 1000.0;
                self.consolidate_all(dt_s * self.exposure_scale);
            }
        }
        self.spikes.last().map_or(&[], |s| s.as_slice())
    }

    fn forward(&mut self, input_spikes: &[bool]) {
        self.spikes[0].copy_from_slice(input_spikes);
        let decay = self.config.layers[0].neuron.trace_decay();
        for (tr, &s) in self.input_trace.iter_mut().zip(input_spikes) {
            *tr = (*tr + f64::from(u8::from(s))) * decay;
        }
        let sums = &mut self.scratch;
        for (b, block) in self.blocks.iter_mut().enumerate() {
            sums.clear();
            sums.resize(block.post, 0.0);
            for (j, _) in self.spikes[b].iter().enumerate().filter(|(_, s)| **s) {
                self.pending[b].catch_up_row(block, j, &self.config.plasticity[b]);
                let row = &block.synapses[j * block.post..(j + 1) * block.post];
                for (acc, syn) in sums.iter_mut().zip(row) {
                    *acc += syn.w;
                }
            }
            let params = &self.config.layers[b + 1].neuron;
            let (_, rest) = self.spikes.split_at_mut(b + 1);
            let out = &mut rest[0];
            for ((n, s), &sum) in self.neurons[b].iter_mut().zip(out.iter_mut()).zip(sums.iter()) {
                let (next, spike) = n.advance(params, sum);
                *n = next;
                *s = spike;
            }
        }
    }

    fn error_path(&mut self, label_spikes: &[bool]) {
        let ep = self.config.error_neuron;
        let out_spikes = self.spikes.last().expect("output layer");
        for i in 0..out_spikes.len() {
            let i_err = f64::from(u8::from(out_spikes[i])) - f64::from(u8::from(label_spikes[i]));
            let (fp, sfp) = self.err_fp[i].step(&ep, i_err);
            let (fn_, sfn) = self.err_fn[i].step(&ep, -i_err);
            self.err_fp[i] = fp;
            self.err_fn[i] = fn_;
            self.fp_spikes[i] = sfp;
            self.fn_spikes[i] = sfn;
        }
        let n_layers = self.neurons.len();
        for (h, fb) in self.feedback.iter().enumerate() {
            let e = &mut self.scratch;
            e.clear();
            e.resize(fb.hidden, 0.0);
            feedback_signal(fb, &self.fp_spikes, &self.fn_spikes, e);
            let params = &self.config.layers[h + 1].neuron;
            for (n, &err) in self.neurons[h].iter_mut().zip(e.iter()) {
                *n = n.integrate_error_compartment(params, err);
            }
        }
        let params = &self.config.layers[n_layers].neuron;
        for (i, n) in self.neurons[n_layers - 1].iter_mut().enumerate() {
            let err = f64::from(u8::from(self.fp_spikes[i])) - f64::from(u8::from(self.fn_spikes[i]));
            *n = n.integrate_error_compartment(params, err);
        }
    }

    /// Synapses on spiking presynaptic rows get the full update now; rows
    /// whose presynaptic neuron stayed silent only owe heterosynaptic decay
    /// for each postsynaptic spike, which is recorded and applied when the
    /// row is next read.
    fn apply_plasticity(&mut self) {
        for (b, block) in self.blocks.iter_mut().enumerate() {
            let params = &self.config.plasticity[b];
            let pre_spikes = &self.spikes[b];
            let post_spikes = &self.spikes[b + 1];
            let post = &self.neurons[b];
            let pending = &mut self.pending[b];
            for (c, &s) in pending.post_count.iter_mut().zip(post_spikes) {
                *c += u32::from(s);
            }
            let width = block.post;
            for (j, _) in pre_spikes.iter().enumerate().filter(|(_, s)| **s) {
                let row = &mut block.synapses[j * width..(j + 1) * width];
                pending.stamp[j * width..(j + 1) * width].copy_from_slice(&pending.post_count);
                for (i, syn) in row.iter_mut().enumerate() {
                    let n = &post[i];
                    let spiked = post_spikes[i];
                    if !spiked && n.u == 0.0 {
                        continue;
                    }
                    *syn = combined_update(*syn, true, spiked, n.u, n.i_syn, params);
                }
            }
        }
    }

    /// Applies all deferred heterosynaptic decay. Called at every sample
    /// boundary; weights read mid-sample may lag until then.
    pub fn settle(&mut self) {
        for ((block, pending), params) in self.blocks.iter_mut().zip(&mut self.pending).zip(&self.config.plasticity) {
            for j in 0..block.pre {
                pending.catch_up_row(block, j, params);
            }
            pending.post_count.iter_mut().for_each(|c| *c = 0);
            pending.stamp.iter_mut().for_each(|c| *c = 0);
        }
    }

    fn consolidate_all(&mut self, elapsed_s: f64) {
        for (block, params) in self.blocks.iter_mut().zip(&self.config.plasticity) {
            for syn in &mut block.synapses {
                *syn = consolidate_reference(*syn, params, elapsed_s);
            }
        }
    }

    /// Sample boundary: consolidates reference weights, updates metaplastic
    /// states from the current traces, then resets membrane, current, error
    /// compartment and refractory state. Traces carry over.
    pub fn end_of_sample(&mut self, sample_duration_ms: f64) {
        let scale = self.exposure_scale;
        let per_sample = self.config.consolidation == ConsolidationSchedule::PerSample;
        let dynamic = self.config.metaplastic == MetaplasticMode::Dynamic;
        let elapsed_s = sample_duration_ms / 1000.0;
        self.settle();
        for b in 0..self.blocks.len() {
            let base = self.config.plasticity[b];
            let params = PlasticityParams {
                t_cons: base.t_cons / scale,
                delta_m: base.delta_m * scale,
                ..base
            };
            let pre_tr = if b == 0 {
                self.input_trace.clone()
            } else {
                self.neurons[b - 1].iter().map(|n| n.trace).collect()
            };
            let post_tr: Vec<f64> = self.neurons[b].iter().map(|n| n.trace).collect();
            let block = &mut self.blocks[b];
            if per_sample {
                for syn in &mut block.synapses {
                    *syn = consolidate_reference(*syn, &params, elapsed_s);
                }
            }
            if dynamic && params.delta_m > 0.0 {
                let posts: Vec<usize> = (0..block.post).filter(|&i| post_tr[i] >= params.m_th_post).collect();
                for (j, &tp) in pre_tr.iter().enumerate().filter(|(_, t)| **t >= params.m_th_pre) {
                    for &i in &posts {
                        let syn = block.get_mut(j, i);
                        *syn = update_metaplastic_state(*syn, tp, post_tr[i], &params);
                    }
                }
            }
        }
        self.reset_dynamics();
    }

    /// Resets membrane, current, error compartment, refractory state and
    /// error neurons; keeps traces and synapses.
    pub fn reset_dynamics(&mut self) {
        for (l, layer) in self.neurons.iter_mut().enumerate() {
            let params = &self.config.layers[l + 1].neuron;
            layer.iter_mut().for_each(|n| n.reset_dynamics(params));
        }
        self.err_fp.iter_mut().for_each(|e| *e = ErrorNeuronState::default());
        self.err_fn.iter_mut().for_each(|e| *e = ErrorNeuronState::default());
    }

    /// Clears every activity trace.
    pub fn clear_traces(&mut self) {
        self.input_trace.iter_mut().for_each(|t| *t = 0.0);
        self.neurons.iter_mut().flatten().for_each(|n| n.trace = 0.0);
    }

    /// Presents `steps` steps from `source` without learning and counts spikes.
    pub fn infer<S: SpikeSource + ?Sized>(&mut self, source: &mut S, steps: usize) -> InferenceOutcome {
        let sizes = self.config.layer_sizes();
        let mut buf = core::mem::take(&mut self.input_buf);
        buf.clear();
        buf.resize(sizes[0], false);
        let n_hidden: usize = sizes[1..sizes.len() - 1].iter().sum();
        let mut outcome = InferenceOutcome {
            output_counts: vec![0; self.config.outputs()],
            hidden_counts: vec![0; n_hidden],
        };
        for t in 0..steps {
            source.fill(t, &mut buf);
            self.step(&buf, &[], false);
            let mut k = 0;
            for l in 1..sizes.len() - 1 {
                for &s in &self.spikes[l] {
                    outcome.hidden_counts[k] += u32::from(s);
                    k += 1;
                }
            }
            for (c, &s) in outcome.output_counts.iter_mut().zip(self.spikes.last().expect("output")) {
                *c += u32::from(s);
            }
        }
        self.input_buf = buf;
        outcome
    }

    /// Class with the most output spikes over `steps` steps (learning off).
    pub fn predict<S: SpikeSource + ?Sized>(&mut self, source: &mut S, steps: usize) -> usize {
        argmax_lowest(&self.infer(source, steps).output_counts)
    }
}

/// Postsynaptic spike counts since the last settle, and the count each
/// synapse has already been brought up to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PendingDecay {
    post_count: Vec<u32>,
    stamp: Vec<u32>,
}

impl PendingDecay {
    fn catch_up_row(&mut self, block: &mut WeightBlock, j: usize, params: &PlasticityParams) {
        let width = block.post;
        let row = &mut block.synapses[j * width..(j + 1) * width];
        let stamps = &mut self.stamp[j * width..(j + 1) * width];
        for ((syn, st), &c) in row.iter_mut().zip(stamps.iter_mut()).zip(&self.post_count) {
            if c != *st {
                *syn = repeated_heterosynaptic(*syn, c - *st, params);
                *st = c;
            }
        }
    }
}

fn feedback_signal(fb: &FeedbackBlock, fp_spikes: &[bool], fn_spikes: &[bool], e: &mut [f64]) {
    for i in 0..fb.outputs {
        let row = i * fb.hidden..(i + 1) * fb.hidden;
        if fp_spikes[i] {
            for (x, w) in e.iter_mut().zip(&fb.fp[row.clone()]) {
                *x += w;
            }
        }
        if fn_spikes[i] {
            for (x, w) in e.iter_mut().zip(&fb.fn_[row]) {
                *x -= w;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> NetworkModel {
        NetworkModel::build(NetworkConfig::new(&[6, 5, 2], seed)).unwrap()
    }

    #[test]
    fn deferred_decay_matches_settling_every_step() {
        let mut cfg = NetworkConfig::new(&[12, 8, 2], 5);
        cfg.init_gain = 12.0;
        cfg.metaplastic = MetaplasticMode::Fixed(3.0);
        cfg.plasticity.iter_mut().for_each(|p| p.alpha = 0.05);
        let mut lazy = NetworkModel::build(cfg).unwrap();
        let mut eager = lazy.clone();
        let mut rng = SeedStreams::new(9).rng(Stream::InputEncoding, 0, 0);
        let mut post_spikes = 0;
        for sample in 0..6 {
            for t in 0..60 {
                let input: Vec<bool> = (0..12).map(|_| rng.gen_bool(0.6)).collect();
                let label = [t % 3 == sample % 2, false];
                lazy.step(&input, &label, true);
                eager.step(&input, &label, true);
                eager.settle();
                post_spikes += lazy.spikes(1).iter().filter(|s| **s).count();
            }
            lazy.end_of_sample(60.0);
            eager.end_of_sample(60.0);
            assert_eq!(lazy.blocks(), eager.blocks());
        }
        assert!(post_spikes > 50, "{post_spikes}");
    }

    #[test]
    fn build_is_deterministic() {
        assert_eq!(small(3), small(3));
        assert_ne!(small(3).blocks, small(4).blocks);
    }

    #[test]
    fn block_shapes_follow_layer_sizes() {
        let m = NetworkModel::build(NetworkConfig::new(&[784, 200, 2], 1)).unwrap();
        assert_eq!((m.blocks[0].pre, m.blocks[0].post), (784, 200));
        assert_eq!((m.blocks[1].pre, m.blocks[1].post), (200, 2));
        assert_eq!(m.feedback.len(), 1);
        assert_eq!((m.feedback[0].outputs, m.feedback[0].hidden), (2, 200));
        assert_eq!(m.feedback[0].fp.len(), 400);
        assert_eq!(m.feedback[0].fn_.len(), 400);

        let m = NetworkModel::build(NetworkConfig::new(&[784, 200, 200, 2], 1)).unwrap();
        assert_eq!(m.blocks.len(), 3);
        assert_eq!(m.feedback.len(), 2);
        assert_eq!(m.feedback[1].hidden, 200);
    }

    #[test]
    fn initial_synapses() {
        let m = small(5);
        let bound = 1.0 / libm::sqrt(6.0);
        for s in &m.blocks[0].synapses {
            assert!(s.w.abs() <= bound);
            assert_eq!(s.w_ref, s.w);
            assert_eq!(s.m, 0.0);
        }
        for w in m.feedback[0].fp.iter().chain(&m.feedback[0].fn_) {
            assert!((-1.0..=1.0).contains(w));
        }
    }

    #[test]
    fn default_layer_constants() {
        let c = NetworkConfig::new(&[784, 200, 200, 2], 0);
        assert_eq!(c.layers[1].neuron.tau_syn, 10.0);
        assert_eq!(c.layers[2].neuron.tau_syn, 25.0);
        assert_eq!(c.layers[3].neuron.v_th, 2.0);
        assert_eq!(c.layers[3].neuron.r_mem, 5.0);
        assert_eq!(c.plasticity[0].m_th_pre, 6.0);
        assert_eq!(c.plasticity[1].m_th_pre, 5.0);
        assert_eq!(c.plasticity[2].delta_m, 0.004);
        assert_eq!(c.plasticity[2].m_th_post, 2.0);
        assert_eq!(c.plasticity[0].delta_m, 0.04);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(NetworkModel::build(NetworkConfig::new(&[4, 2], 0)).is_err());
        assert!(NetworkModel::build(NetworkConfig::new(&[4, 0, 2], 0)).is_err());
        let mut c = NetworkConfig::new(&[4, 3, 2], 0);
        c.plasticity.pop();
        assert!(matches!(NetworkModel::build(c), Err(Error::Shape { .. })));
    }

    #[test]
    fn output_error_current_cases() {
        assert_eq!(output_error_current(&[true, false], &[true, false]), [0.0, 0.0]);
        assert_eq!(output_error_current(&[true, false], &[false, false]), [1.0, 0.0]);
        assert_eq!(output_error_current(&[false, true], &[true, true]), [-1.0, 0.0]);
    }

    #[test]
    #[should_panic]
    fn output_error_current_length_mismatch() {
        output_error_current(&[true], &[true, false]);
    }

    #[test]
    fn error_signal_cases() {
        let m = small(2);
        let e = m.error_signals(&[false, false], &[false, false]);
        assert!(e.iter().flatten().all(|x| *x == 0.0));

        let e = m.error_signals(&[false, true], &[false, false]);
        assert_eq!(e[0], m.feedback[0].fp[5..10].to_vec());
        assert_eq!(e[1], [0.0, 1.0]);

        let e = m.error_signals(&[true, false], &[true, false]);
        assert_eq!(e[1][0], 0.0);
        let expect: Vec<f64> = (0..5).map(|j| m.feedback[0].fp[j] - m.feedback[0].fn_[j]).collect();
        assert_eq!(e[0], expect);
    }

    #[test]
    fn evaluation_steps_leave_synapses_untouched() {
        let mut m = small(9);
        let before = m.blocks.clone();
        let fb = m.feedback.clone();
        for t in 0..300 {
            let input: Vec<bool> = (0..6).map(|j| (t + j) % 3 == 0).collect();
            m.step(&input, &[], false);
        }
        assert_eq!(m.blocks, before);
        assert_eq!(m.feedback, fb);
    }

    #[test]
    fn quiescent_without_input() {
        let mut m = small(1);
        for _ in 0..200 {
            let input = [true; 6];
            m.step(&input, &[false, true], true);
        }
        m.reset_dynamics();
        let mut spikes = 0;
        for _ in 0..5 * 50 {
            spikes += m.step(&[false; 6], &[false, false], true).iter().filter(|s| **s).count();
        }
        assert_eq!(spikes, 0);
        assert!(m.neurons.iter().flatten().all(|n| n.v.abs() < 0.1));
    }

    #[test]
    fn learning_keeps_feedback_fixed() {
        let mut m = small(11);
        let fb = m.feedback.clone();
        for t in 0..500 {
            let input: Vec<bool> = (0..6).map(|j| (t * 7 + j) % 4 == 0).collect();
            m.step(&input, &[t % 5 == 0, false], true);
            if t % 100 == 99 {
                m.end_of_sample(100.0);
            }
        }
        assert_eq!(m.feedback, fb);
        assert_ne!(m.weight_snapshot(), small(11).weight_snapshot());
    }

    #[test]
    fn end_of_sample_consolidates_and_resets() {
        let mut m = small(0);
        for b in &mut m.blocks {
            for s in &mut b.synapses {
                s.w_ref = s.w;
            }
        }
        m.blocks[0].synapses[0] = SynapseState { w: 1.0, w_ref: 0.0, m: 0.0 };
        m.neurons[0][1].v = 0.7;
        m.neurons[0][1].u = 0.3;
        m.neurons[0][1].trace = 0.4;
        m.end_of_sample(100.0);
        assert!((m.blocks[0].synapses[0].w_ref - 0.004).abs() < 1e-15);
        assert_eq!(m.blocks[0].synapses[1].w_ref, m.blocks[0].synapses[1].w);
        assert_eq!(m.neurons[0][1].v, 0.0);
        assert_eq!(m.neurons[0][1].u, 0.0);
        assert_eq!(m.neurons[0][1].trace, 0.4);
    }

    #[test]
    fn end_of_sample_without_plasticity_only_resets() {
        let mut c = NetworkConfig::new(&[6, 5, 2], 0);
        c.plasticity.iter_mut().for_each(|p| p.delta_m = 0.0);
        let mut m = NetworkModel::build(c).unwrap();
        m.input_trace.iter_mut().for_each(|t| *t = 10.0);
        m.neurons.iter_mut().flatten().for_each(|n| {
            n.trace = 10.0;
            n.v = 0.5;
        });
        let before = m.blocks.clone();
        m.end_of_sample(100.0);
        assert_eq!(m.blocks, before);
        assert!(m.neurons.iter().flatten().all(|n| n.v == 0.0 && n.trace == 10.0));
    }

    #[test]
    fn metaplastic_growth_needs_both_traces() {
        let mut m = small(0);
        m.input_trace[2] = 7.0;
        m.input_trace[3] = 7.0;
        m.neurons[0][4].trace = 5.5;
        m.neurons[0][1].trace = 1.0;
        m.end_of_sample(100.0);
        for j in 0..6 {
            for i in 0..5 {
                let expect = if (j == 2 || j == 3) && i == 4 { 0.04 } else { 0.0 };
                assert_eq!(m.blocks[0].get(j, i).m, expect, "synapse {j}->{i}");
            }
        }
        assert!(m.blocks[1].synapses.iter().all(|s| s.m == 0.0));
    }

    #[test]
    fn exposure_scale_multiplies_increment_and_consolidation_rate() {
        let mut m = small(0);
        m.set_exposure_scale(12.0);
        m.blocks[0].synapses[0] = SynapseState { w: 1.0, w_ref: 0.0, m: 0.0 };
        m.input_trace[0] = 9.0;
        m.neurons[0][0].trace = 9.0;
        m.end_of_sample(100.0);
        let s = m.blocks[0].synapses[0];
        assert!((s.m - 0.48).abs() < 1e-15);
        assert!((s.w_ref - 0.048).abs() < 1e-15);
    }

    #[test]
    fn fixed_mode_pins_m() {
        let mut c = NetworkConfig::new(&[6, 5, 2], 0);
        c.metaplastic = MetaplasticMode::Fixed(50.0);
        let mut m = NetworkModel::build(c).unwrap();
        m.input_trace.iter_mut().for_each(|t| *t = 50.0);
        m.neurons.iter_mut().flatten().for_each(|n| n.trace = 50.0);
        m.end_of_sample(100.0);
        assert!(m.blocks.iter().flat_map(|b| &b.synapses).all(|s| s.m == 50.0));
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax_lowest(&[10, 3]), 0);
        assert_eq!(argmax_lowest(&[5, 5]), 0);
        assert_eq!(argmax_lowest(&[1, 4]), 1);
        assert_eq!(argmax_lowest(&[0, 0]), 0);
    }

    #[test]
    fn predict_is_deterministic() {
        let mut m = small(21);
        let raster: Vec<Vec<bool>> = (0..100).map(|t| (0..6).map(|j| (t * 3 + j * 5) % 7 < 3).collect()).collect();
        let mut src = |t: usize, out: &mut [bool]| out.copy_from_slice(&raster[t]);
        let mut a = m.clone();
        let ra = a.infer(&mut src, 100);
        let rb = m.infer(&mut src, 100);
        assert_eq!(ra, rb);
    }
}
