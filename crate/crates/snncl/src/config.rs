//! Experiment configuration: a TOML document whose every key has a default.
//!
//! Any key can be overridden with a dotted `key=value` pair, for example
//! `plasticity.m_max=5` or `seeds=[1,2,3]`. Values are parsed as TOML and fall
//! back to plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use snncl_core::dataset::TaskOrder;
use snncl_core::encoding::SpikeEncoderConfig;
use snncl_core::experiment::{Mode, Protocol};
use snncl_core::network::{
    ConsolidationSchedule, LayerConfig, MetaplasticMode, NetworkConfig,
};
use snncl_core::neuron::{CompartmentLeak, ErrorNeuronParams, NeuronParams};
use snncl_core::plasticity::PlasticityParams;

use crate::error::AppError;

/// Environment variable consulted for the dataset directory when the
/// configuration does not name one.
pub const DATA_ROOT_ENV: &str = "SNNCL_DATA_ROOT";

/// Directory used when neither the configuration nor the environment names
/// one.
pub const DEFAULT_DATA_ROOT: &str = "data/mnist";

/// Dataset location.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Directory holding `train-*` and `t10k-*` IDX files.
    pub root: Option<PathBuf>,
    /// Explicit file paths; each overrides the one derived from `root`.
    pub train_images: Option<PathBuf>,
    /// Training labels.
    pub train_labels: Option<PathBuf>,
    /// Test images.
    pub test_images: Option<PathBuf>,
    /// Test labels.
    pub test_labels: Option<PathBuf>,
    /// Keep only the first N test images of each task (quick runs).
    pub test_per_task: Option<usize>,
}

/// Task ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    /// Built-in ordering 1..=5.
    pub preset: Option<u8>,
    /// Explicit class groups, one per task. Takes precedence over `preset`.
    pub custom: Option<Vec<Vec<u8>>>,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection { preset: Some(1), custom: None }
    }
}

/// Topology and initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Hidden layer sizes.
    pub hidden: Vec<usize>,
    /// Forward weights start uniform in `±init_gain / sqrt(fan_in)`.
    pub init_gain: f64,
    /// Feedback weights are uniform in `[feedback_min, feedback_max)`.
    pub feedback_min: f64,
    /// Upper feedback bound.
    pub feedback_max: f64,
    /// `per_sample` or `per_step` reference-weight tracking.
    pub consolidation: ConsolidationSchedule,
    /// `leaky` or `leak_free` error compartment.
    pub compartment: CompartmentLeak,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden: vec![200],
            init_gain: 1.0,
            feedback_min: -1.0,
            feedback_max: 1.0,
            consolidation: ConsolidationSchedule::PerSample,
            compartment: CompartmentLeak::Leaky,
        }
    }
}

/// Neuron constants. Times in ms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronSection {
    /// Simulation step.
    pub dt: f64,
    /// Resting potential (mV).
    pub v_rest: f64,
    /// Refractory period.
    pub t_refrac: f64,
    /// Activity trace time constant.
    pub tau_tr: f64,
    /// Error compartment time constant.
    pub tau_u: f64,
    /// Error compartment gain.
    pub r_u: f64,
    /// Synaptic time constant of the first hidden layer.
    pub tau_syn_input: f64,
    /// Synaptic time constant of every other layer.
    pub tau_syn: f64,
    /// Hidden membrane time constant.
    pub tau_mem_hidden: f64,
    /// Output membrane time constant.
    pub tau_mem_output: f64,
    /// Hidden membrane resistance.
    pub r_hidden: f64,
    /// Output membrane resistance.
    pub r_output: f64,
    /// Hidden threshold (mV).
    pub v_th_hidden: f64,
    /// Output threshold (mV).
    pub v_th_output: f64,
}

impl Default for NeuronSection {
    fn default() -> Self {
        NeuronSection {
            dt: 1.0,
            v_rest: 0.0,
            t_refrac: 4.0,
            tau_tr: 50.0,
            tau_u: 15.0,
            r_u: 5.0,
            tau_syn_input: 10.0,
            tau_syn: 25.0,
            tau_mem_hidden: 15.0,
            tau_mem_output: 25.0,
            r_hidden: 1.0,
            r_output: 5.0,
            v_th_hidden: 1.0,
            v_th_output: 2.0,
        }
    }
}

/// Error neuron constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorNeuronSection {
    /// Time constant (ms).
    pub tau_me: f64,
    /// Gain.
    pub r_me: f64,
    /// Threshold (mV).
    pub v_th: f64,
}

impl Default for ErrorNeuronSection {
    fn default() -> Self {
        let d = ErrorNeuronParams::default();
        ErrorNeuronSection { tau_me: d.tau_me, r_me: d.r_me, v_th: d.v_th_err }
    }
}

/// Learning constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlasticitySection {
    /// Error-driven learning rate.
    pub lr: f64,
    /// Heterosynaptic decay strength.
    pub l_decay: f64,
    /// Lower current bound for weight updates.
    pub i_min: f64,
    /// Upper current bound for weight updates.
    pub i_max: f64,
    /// Consolidation timescale (s).
    pub t_cons: f64,
    /// Metaplastic increment.
    pub delta_m: f64,
    /// Metaplastic increment of the output block.
    pub delta_m_output: f64,
    /// Metaplastic ceiling.
    pub m_max: f64,
    /// Trace threshold of input neurons.
    pub m_th_input: f64,
    /// Trace threshold of hidden neurons.
    pub m_th_hidden: f64,
    /// Trace threshold of output neurons.
    pub m_th_output: f64,
}

impl Default for PlasticitySection {
    fn default() -> Self {
        let p = PlasticityParams::INPUT_HIDDEN;
        PlasticitySection {
            lr: p.eta,
            l_decay: p.alpha,
            i_min: p.i_min,
            i_max: p.i_max,
            t_cons: p.t_cons,
            delta_m: p.delta_m,
            delta_m_output: PlasticityParams::HIDDEN_OUTPUT.delta_m,
            m_max: p.m_max,
            m_th_input: 6.0,
            m_th_hidden: 5.0,
            m_th_output: 2.0,
        }
    }
}

/// Spike encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingSection {
    /// Poisson rate of a fully lit pixel (Hz).
    pub f_input: f64,
    /// Target label rate (Hz).
    pub f_label: f64,
    /// Presentation time per training image (ms). Not fixed by any
    /// published value; the largest free calibration of the model.
    pub sample_duration: f64,
    /// Presentation time per test image (ms).
    pub eval_duration: f64,
}

impl Default for EncodingSection {
    fn default() -> Self {
        EncodingSection { f_input: 250.0, f_label: 200.0, sample_duration: 100.0, eval_duration: 100.0 }
    }
}

/// Training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    /// Passes over each task's training set.
    pub epochs: usize,
    /// With `samples_per_task`, scale the metaplastic increment and the
    /// consolidation rate by full / reduced training-set size.
    pub scale_plasticity: bool,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection { epochs: 1, scale_plasticity: true }
    }
}

/// One experiment: possibly several seeds and metaplastic ceilings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label used in reports.
    pub name: String,
    /// Model variant.
    pub mode: Mode,
    /// Constant metaplastic state for `fixed_m`.
    pub fixed_m: Option<f64>,
    /// One run per seed.
    pub seeds: Vec<u64>,
    /// One run per ceiling and seed; empty means `plasticity.m_max` only.
    pub m_max_sweep: Vec<f64>,
    /// Training images per task; unset uses the full training set.
    pub samples_per_task: Option<usize>,
    /// Where run records and reports go.
    pub output_dir: PathBuf,
    /// Dataset files.
    pub data: DataSection,
    /// Task ordering.
    pub tasks: TaskSection,
    /// Topology.
    pub network: NetworkSection,
    /// Neuron constants.
    pub neuron: NeuronSection,
    /// Error neuron constants.
    pub error_neuron: ErrorNeuronSection,
    /// Learning constants.
    pub plasticity: PlasticitySection,
    /// Spike encoding.
    pub encoding: EncodingSection,
    /// Training loop.
    pub protocol: ProtocolSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "split-mnist".into(),
            mode: Mode::Tacos,
            fixed_m: None,
            seeds: vec![1],
            m_max_sweep: Vec::new(),
            samples_per_task: None,
            output_dir: PathBuf::from("runs"),
            data: DataSection::default(),
            tasks: TaskSection::default(),
            network: NetworkSection::default(),
            neuron: NeuronSection::default(),
            error_neuron: ErrorNeuronSection::default(),
            plasticity: PlasticitySection::default(),
            encoding: EncodingSection::default(),
            protocol: ProtocolSection::default(),
        }
    }
}

/// Resolved IDX file paths.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataPaths {
    /// Training images.
    pub train_images: PathBuf,
    /// Training labels.
    pub train_labels: PathBuf,
    /// Test images.
    pub test_images: PathBuf,
    /// Test labels.
    pub test_labels: PathBuf,
}

impl ExperimentConfig {
    /// Reads a TOML file and applies `overrides`.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            AppError::Config(m) => AppError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses TOML text and applies `overrides`.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, AppError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| AppError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig =
            toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults with `overrides` applied.
    pub fn with_overrides(overrides: &[String]) -> Result<Self, AppError> {
        Self::parse("", overrides)
    }

    /// TOML rendering of the full configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    /// Mode-specific and structural checks.
    pub fn validate(&self) -> Result<(), AppError> {
        if self.seeds.is_empty() {
            return Err(AppError::Config("seeds must list at least one seed".into()));
        }
        match (self.mode, self.fixed_m) {
            (Mode::FixedM, None) => return Err(AppError::Config("mode fixed_m needs fixed_m".into())),
            (Mode::FixedM, Some(m)) if !(m >= 0.0) => {
                return Err(AppError::Config("fixed_m must be non-negative".into()))
            }
            (m, Some(_)) if m != Mode::FixedM => {
                return Err(AppError::Config("fixed_m is only valid with mode fixed_m".into()))
            }
            _ => {}
        }
        if self.samples_per_task == Some(0) {
            return Err(AppError::Config("samples_per_task must be positive".into()));
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(AppError::Config("network.hidden needs at least one non-empty layer".into()));
        }
        self.task_order().groups().map_err(AppError::from)?;
        self.protocol().encoder.validate()?;
        for &m in self.m_max_values().iter() {
            self.network_config(&[784, 2], 0, m)?;
        }
        Ok(())
    }

    /// Task ordering.
    pub fn task_order(&self) -> TaskOrder {
        match (&self.tasks.custom, self.tasks.preset) {
            (Some(groups), _) => TaskOrder::Custom(groups.clone()),
            (None, Some(p)) => TaskOrder::Preset(p),
            (None, None) => TaskOrder::Preset(1),
        }
    }

    /// Ceilings to run.
    pub fn m_max_values(&self) -> Vec<f64> {
        if self.m_max_sweep.is_empty() {
            vec![self.plasticity.m_max]
        } else {
            self.m_max_sweep.clone()
        }
    }

    /// Dataset directory: configuration, then environment, then default.
    pub fn data_root(&self) -> PathBuf {
        self.data
            .root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_ROOT))
    }

    /// Resolved dataset files.
    pub fn data_paths(&self) -> DataPaths {
        let root = self.data_root();
        let (ti, tl) = crate::idx::split_paths(&root, true);
        let (vi, vl) = crate::idx::split_paths(&root, false);
        DataPaths {
            train_images: self.data.train_images.clone().unwrap_or(ti),
            train_labels: self.data.train_labels.clone().unwrap_or(tl),
            test_images: self.data.test_images.clone().unwrap_or(vi),
            test_labels: self.data.test_labels.clone().unwrap_or(vl),
        }
    }

    /// Encoder and loop settings.
    pub fn protocol(&self) -> Protocol {
        let e = &self.encoding;
        Protocol {
            encoder: SpikeEncoderConfig {
                f_input: e.f_input,
                f_label: e.f_label,
                dt: self.neuron.dt,
                sample_duration: e.sample_duration,
            },
            eval_duration: e.eval_duration,
            epochs: self.protocol.epochs,
            scale_plasticity: self.protocol.scale_plasticity && self.samples_per_task.is_some(),
        }
    }

    /// Network constants for the given input/output sizes (the hidden
    /// layers come from the configuration), with the mode applied.
    pub fn network_config(&self, io: &[usize; 2], seed: u64, m_max: f64) -> Result<NetworkConfig, AppError> {
        let mut sizes = vec![io[0]];
        sizes.extend_from_slice(&self.network.hidden);
        sizes.push(io[1]);
        let n = &self.neuron;
        let base = NeuronParams {
            tau_u: n.tau_u,
            tau_tr: n.tau_tr,
            r_u: n.r_u,
            v_rest: n.v_rest,
            t_refrac: n.t_refrac,
            dt: n.dt,
            compartment: self.network.compartment,
            ..NeuronParams::HIDDEN
        };
        let last = sizes.len() - 1;
        let layers = sizes
            .iter()
            .enumerate()
            .map(|(l, &size)| {
                let tau_syn = if l == 1 { n.tau_syn_input } else { n.tau_syn };
                let neuron = if l == last {
                    NeuronParams { tau_mem: n.tau_mem_output, r_mem: n.r_output, v_th: n.v_th_output, tau_syn, ..base }
                } else {
                    NeuronParams { tau_mem: n.tau_mem_hidden, r_mem: n.r_hidden, v_th: n.v_th_hidden, tau_syn, ..base }
                };
                LayerConfig { size, neuron }
            })
            .collect();
        let p = &self.plasticity;
        let plasticity = (0..last)
            .map(|b| PlasticityParams {
                eta: p.lr,
                alpha: p.l_decay,
                i_min: p.i_min,
                i_max: p.i_max,
                t_cons: p.t_cons,
                delta_m: if b + 1 == last { p.delta_m_output } else { p.delta_m },
                m_max,
                m_th_pre: if b == 0 { p.m_th_input } else { p.m_th_hidden },
                m_th_post: if b + 1 == last { p.m_th_output } else { p.m_th_hidden },
            })
            .collect();
        let mut cfg = NetworkConfig {
            layers,
            plasticity,
            error_neuron: ErrorNeuronParams {
                tau_me: self.error_neuron.tau_me,
                r_me: self.error_neuron.r_me,
                v_th_err: self.error_neuron.v_th,
                dt: n.dt,
            },
            init_gain: self.network.init_gain,
            feedback_min: self.network.feedback_min,
            feedback_max: self.network.feedback_max,
            metaplastic: MetaplasticMode::Dynamic,
            consolidation: self.network.consolidation,
            seed,
        };
        self.mode.apply(&mut cfg, self.fixed_m)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// One configuration per (m_max, seed) pair, each with a single seed and
    /// no sweep list.
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for m in self.m_max_values() {
            for &seed in &self.seeds {
                let mut c = self.clone();
                c.seeds = vec![seed];
                c.m_max_sweep.clear();
                c.plasticity.m_max = m;
                out.push(c);
            }
        }
        out
    }

    /// Hex digest identifying the run inputs. Name and output directory do
    /// not take part.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.name.clear();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("configuration serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), AppError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| AppError::Config(format!("override `{spec}` is not key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(AppError::Config(format!("bad key in override `{spec}`")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| AppError::Config(format!("`{part}` in override `{spec}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_parameter_table() {
        let c = ExperimentConfig::default();
        let net = c.network_config(&[784, 2], 0, c.plasticity.m_max).unwrap();
        assert_eq!(net, NetworkConfig::new(&[784, 200, 2], 0));
        assert_eq!(c.protocol(), Protocol { scale_plasticity: false, ..Protocol::default() });
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(ExperimentConfig::parse("", &[]).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ExperimentConfig::default();
        c.samples_per_task = Some(1000);
        c.m_max_sweep = vec![5.0, 25.0];
        c.tasks.custom = Some(vec![vec![0, 5], vec![1, 7]]);
        assert_eq!(ExperimentConfig::parse(&c.to_toml(), &[]).unwrap(), c);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = ExperimentConfig::parse(
            "mode = \"baseline\"\n[plasticity]\nlr = 0.5\n",
            &["plasticity.m_max=5".into(), "seeds=[3, 4]".into(), "name=quick run".into(), "network.hidden=[10,10]".into()],
        )
        .unwrap();
        assert_eq!(c.mode, Mode::Baseline);
        assert_eq!(c.plasticity.lr, 0.5);
        assert_eq!(c.plasticity.m_max, 5.0);
        assert_eq!(c.seeds, vec![3, 4]);
        assert_eq!(c.name, "quick run");
        assert_eq!(c.network.hidden, vec![10, 10]);
    }

    #[test]
    fn rejects_bad_input() {
        for (text, o) in [
            ("mode = \"fixed_m\"", vec![]),
            ("fixed_m = 3.0", vec![]),
            ("typo = 1", vec![]),
            ("[plasticity]\nlearning_rate = 1", vec![]),
            ("", vec!["seeds=[]".to_string()]),
            ("", vec!["noequals".to_string()]),
            ("", vec!["tasks.preset=9".to_string()]),
            ("", vec!["encoding.f_input=5000".to_string()]),
            ("", vec!["neuron.tau_mem_hidden=-1".to_string()]),
            ("", vec!["name.x=1".to_string()]),
        ] {
            assert!(matches!(ExperimentConfig::parse(text, &o), Err(AppError::Config(_))), "{text} {o:?}");
        }
    }

    #[test]
    fn mode_constraints_applied() {
        let c = ExperimentConfig::parse("mode = \"baseline\"", &[]).unwrap();
        let net = c.network_config(&[784, 2], 0, 25.0).unwrap();
        assert!(net.plasticity.iter().all(|p| p.alpha == 0.0 && p.delta_m == 0.0));
        let c = ExperimentConfig::parse("mode = \"fixed_m\"\nfixed_m = 50.0", &[]).unwrap();
        let net = c.network_config(&[784, 2], 0, 25.0).unwrap();
        assert_eq!(net.metaplastic, MetaplasticMode::Fixed(50.0));
    }

    #[test]
    fn expansion_and_hash() {
        let c = ExperimentConfig::parse("seeds = [1, 2]\nm_max_sweep = [5.0, 10.0, 25.0]", &[]).unwrap();
        let runs = c.expand();
        assert_eq!(runs.len(), 6);
        let hashes: std::collections::BTreeSet<_> = runs.iter().map(ExperimentConfig::hash).collect();
        assert_eq!(hashes.len(), 6);
        let mut renamed = runs[0].clone();
        renamed.name = "other".into();
        renamed.output_dir = "elsewhere".into();
        assert_eq!(renamed.hash(), runs[0].hash());
        assert_eq!(runs[0].hash().len(), 16);
    }

    #[test]
    fn reduced_data_enables_scaling() {
        let c = ExperimentConfig::parse("samples_per_task = 1000", &[]).unwrap();
        assert!(c.protocol().scale_plasticity);
        let c = ExperimentConfig::parse("samples_per_task = 1000\n[protocol]\nscale_plasticity = false", &[]).unwrap();
        assert!(!c.protocol().scale_plasticity);
    }
}
