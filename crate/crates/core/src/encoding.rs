//! Poisson rate coding of images and target labels.
//!
//! Poisson trains are realized per step as Bernoulli draws with probability
//! `rate * dt / 1000`. Each encoder owns a private generator, so a sample's
//! raster depends only on its stream and the step index.

use alloc::vec::Vec;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Rates and timing of the encoders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeEncoderConfig {
    /// Rate of a full-intensity pixel (Hz).
    pub f_input: f64,
    /// Rate of the target label neuron (Hz).
    pub f_label: f64,
    /// Simulation step (ms).
    pub dt: f64,
    /// Presentation time of one sample (ms).
    pub sample_duration: f64,
}

impl Default for SpikeEncoderConfig {
    fn default() -> Self {
        SpikeEncoderConfig {
            f_input: 250.0,
            f_label: 200.0,
            dt: 1.0,
            sample_duration: 100.0,
        }
    }
}

impl SpikeEncoderConfig {
    /// Checks that rates are non-negative and give per-step probabilities <= 1.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.sample_duration >= self.dt) {
            return Err(Error::Config("encoder dt and sample_duration must be positive".into()));
        }
        for rate in [self.f_input, self.f_label] {
            if !(rate >= 0.0) || rate * self.dt > 1000.0 {
                return Err(Error::Config("spike rates must satisfy 0 <= rate*dt <= 1000".into()));
            }
        }
        Ok(())
    }

    /// Number of simulation steps per sample.
    pub fn steps_per_sample(&self) -> usize {
        libm::round(self.sample_duration / self.dt) as usize
    }

    /// Sample duration in seconds.
    pub fn sample_seconds(&self) -> f64 {
        self.sample_duration / 1000.0
    }
}

/// Anything that can write one step of input spikes.
pub trait SpikeSource {
    /// Writes the spikes of step `t` into `out`.
    fn fill(&mut self, t: usize, out: &mut [bool]);
}

impl<F: FnMut(usize, &mut [bool])> SpikeSource for F {
    fn fill(&mut self, t: usize, out: &mut [bool]) {
        self(t, out)
    }
}

const SCALE: f64 = 4_294_967_296.0;

#[inline]
fn threshold(p: f64) -> u64 {
    libm::floor(p.clamp(0.0, 1.0) * SCALE) as u64
}

/// Bernoulli draw against a 32-bit threshold; probability `threshold / 2^32`.
#[inline]
fn draw(rng: &mut ChaCha8Rng, threshold: u64) -> bool {
    u64::from(rng.next_u32()) < threshold
}

/// Poisson encoder for one image.
#[derive(Debug, Clone)]
pub struct PoissonEncoder {
    active: Vec<(u32, u64)>,
    rng: ChaCha8Rng,
}

impl PoissonEncoder {
    /// Encoder for an image of intensities in `[0, 1]`. Zero pixels never fire.
    pub fn new<I>(intensities: I, config: &SpikeEncoderConfig, rng: ChaCha8Rng) -> Self
    where
        I: IntoIterator<Item = f64>,
    {
        let per_unit = config.f_input * config.dt / 1000.0;
        let active = intensities
            .into_iter()
            .enumerate()
            .filter(|(_, x)| *x > 0.0)
            .map(|(i, x)| (i as u32, threshold(x * per_unit)))
            .filter(|(_, th)| *th > 0)
            .collect();
        PoissonEncoder { active, rng }
    }

    /// Draws the next step's spikes.
    #[inline]
    pub fn encode_step(&mut self, out: &mut [bool]) {
        out.fill(false);
        for &(i, th) in &self.active {
            out[i as usize] = draw(&mut self.rng, th);
        }
    }
}

impl SpikeSource for PoissonEncoder {
    fn fill(&mut self, _t: usize, out: &mut [bool]) {
        self.encode_step(out);
    }
}

/// Target spike train on the output head: only the target neuron fires.
#[derive(Debug, Clone)]
pub struct LabelEncoder {
    target: usize,
    threshold: u64,
    rng: ChaCha8Rng,
}

impl LabelEncoder {
    /// Label train for head neuron `target`.
    pub fn new(target: usize, config: &SpikeEncoderConfig, rng: ChaCha8Rng) -> Self {
        LabelEncoder {
            target,
            threshold: threshold(config.f_label * config.dt / 1000.0),
            rng,
        }
    }

    /// Draws the next step's label spikes.
    #[inline]
    pub fn encode_step(&mut self, out: &mut [bool]) {
        out.fill(false);
        if self.threshold > 0 {
            out[self.target] = draw(&mut self.rng, self.threshold);
        }
    }
}
