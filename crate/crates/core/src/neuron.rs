//! Leaky integrate-and-fire dynamics with a second, error-integrating
//! compartment, plus the signed-error integrate-and-fire neurons.
//!
//! Every update is a value-in/value-out transition on a `Copy` state so a
//! whole layer can be advanced with a plain map over its neurons.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How the error compartment `U` integrates its feedback signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompartmentLeak {
    /// `U` relaxes towards `E * r_u` with time constant `tau_u`.
    #[default]
    Leaky,
    /// `U` accumulates `E * r_u` without decay.
    LeakFree,
}

/// Per-layer neuron constants. Times are in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    /// Membrane time constant.
    pub tau_mem: f64,
    /// Synaptic current time constant.
    pub tau_syn: f64,
    /// Error compartment time constant.
    pub tau_u: f64,
    /// Activity trace time constant.
    pub tau_tr: f64,
    /// Membrane gain applied to the synaptic current.
    pub r_mem: f64,
    /// Error compartment gain.
    pub r_u: f64,
    /// Resting potential (mV).
    pub v_rest: f64,
    /// Firing threshold (mV).
    pub v_th: f64,
    /// Refractory duration.
    pub t_refrac: f64,
    /// Simulation step.
    pub dt: f64,
    /// Error compartment integration form.
    #[serde(default)]
    pub compartment: CompartmentLeak,
}

impl NeuronParams {
    /// Hidden-layer defaults: 15 ms membrane, unit gain, 1 mV threshold.
    pub const HIDDEN: NeuronParams = NeuronParams {
        tau_mem: 15.0,
        tau_syn: 25.0,
        tau_u: 15.0,
        tau_tr: 50.0,
        r_mem: 1.0,
        r_u: 5.0,
        v_rest: 0.0,
        v_th: 1.0,
        t_refrac: 4.0,
        dt: 1.0,
        compartment: CompartmentLeak::Leaky,
    };

    /// Output-layer defaults: 25 ms membrane, gain 5, 2 mV threshold.
    pub const OUTPUT: NeuronParams = NeuronParams {
        tau_mem: 25.0,
        r_mem: 5.0,
        v_th: 2.0,
        ..Self::HIDDEN
    };

    /// First hidden layer: its current integrates input spikes with a 10 ms
    /// time constant.
    pub const INPUT_FED: NeuronParams = NeuronParams {
        tau_syn: 10.0,
        ..Self::HIDDEN
    };

    /// Checks the time-constant and threshold invariants.
    pub fn validate(&self) -> Result<()> {
        let taus = [self.tau_mem, self.tau_syn, self.tau_u, self.tau_tr];
        if taus.iter().any(|t| !(*t > 0.0)) || !(self.dt > 0.0) {
            return Err(Error::Config("time constants and dt must be positive".into()));
        }
        if taus.iter().any(|t| self.dt > *t) {
            return Err(Error::Config("dt must not exceed any time constant".into()));
        }
        if !(self.v_th > self.v_rest) {
            return Err(Error::Config("v_th must exceed v_rest".into()));
        }
        if !(self.t_refrac >= 0.0) {
            return Err(Error::Config("t_refrac must be non-negative".into()));
        }
        Ok(())
    }

    /// Per-step multiplicative decay of the activity trace.
    #[inline]
    pub fn trace_decay(&self) -> f64 {
        1.0 - self.dt / self.tau_tr
    }
}

/// Dynamic state of one LIF neuron.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NeuronState {
    /// Membrane potential (mV).
    pub v: f64,
    /// Synaptic current.
    pub i_syn: f64,
    /// Accumulated error in the second compartment.
    pub u: f64,
    /// Remaining refractory time (ms).
    pub refrac_remaining: f64,
    /// Activity trace.
    pub trace: f64,
}

impl NeuronState {
    /// Neuron at rest with an empty trace.
    pub fn at_rest(params: &NeuronParams) -> Self {
        NeuronState {
            v: params.v_rest,
            ..Default::default()
        }
    }

    /// Relaxes the synaptic current towards the weighted presynaptic spike sum.
    #[inline]
    pub fn integrate_current(self, params: &NeuronParams, weighted_spike_sum: f64) -> Self {
        let k = params.dt / params.tau_syn;
        NeuronState {
            i_syn: self.i_syn + k * (weighted_spike_sum - self.i_syn),
            ..self
        }
    }

    /// Leaky membrane integration. The caller skips refractory neurons.
    #[inline]
    pub fn integrate_membrane(self, params: &NeuronParams) -> Self {
        let k = params.dt / params.tau_mem;
        NeuronState {
            v: self.v + k * ((params.v_rest - self.v) + self.i_syn * params.r_mem),
            ..self
        }
    }

    /// Threshold test, reset and refractory bookkeeping, then trace decay.
    #[inline]
    pub fn fire_and_reset(self, params: &NeuronParams) -> (Self, bool) {
        let mut next = self;
        let mut spike = false;
        if next.refrac_remaining > 0.0 {
            next.refrac_remaining = (next.refrac_remaining - params.dt).max(0.0);
            next.v = 0.0;
        } else if next.v >= params.v_th {
            spike = true;
            next.v = 0.0;
            next.refrac_remaining = params.t_refrac;
            next.trace += 1.0;
        }
        next.trace *= params.trace_decay();
        (next, spike)
    }

    /// Integrates the signed error signal into the `U` compartment.
    #[inline]
    pub fn integrate_error_compartment(self, params: &NeuronParams, err_signal: f64) -> Self {
        let k = params.dt / params.tau_u;
        let u = match params.compartment {
            CompartmentLeak::Leaky => self.u + k * (-self.u + err_signal * params.r_u),
            CompartmentLeak::LeakFree => self.u + k * err_signal * params.r_u,
        };
        NeuronState { u, ..self }
    }

    /// One forward step: current, membrane (unless refractory), spike.
    #[inline]
    pub fn advance(self, params: &NeuronParams, weighted_spike_sum: f64) -> (Self, bool) {
        let s = self.integrate_current(params, weighted_spike_sum);
        let s = if s.refrac_remaining > 0.0 {
            s
        } else {
            s.integrate_membrane(params)
        };
        s.fire_and_reset(params)
    }

    /// Clears the per-sample dynamics and keeps the activity trace.
    #[inline]
    pub fn reset_dynamics(&mut self, params: &NeuronParams) {
        *self = NeuronState {
            trace: self.trace,
            ..NeuronState::at_rest(params)
        };
    }
}

/// Constants of the error-encoding neurons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorNeuronParams {
    /// Membrane time constant (ms).
    pub tau_me: f64,
    /// Input gain.
    pub r_me: f64,
    /// Firing threshold (mV).
    pub v_th_err: f64,
    /// Simulation step (ms).
    pub dt: f64,
}

impl Default for ErrorNeuronParams {
    fn default() -> Self {
        ErrorNeuronParams {
            tau_me: 10.0,
            r_me: 25.0,
            v_th_err: 2.5,
            dt: 1.0,
        }
    }
}

impl ErrorNeuronParams {
    /// Checks `tau_me > 0`, `v_th_err > 0` and `0 < dt <= tau_me`.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_me > 0.0) || !(self.v_th_err > 0.0) || !(self.dt > 0.0) || self.dt > self.tau_me
        {
            return Err(Error::Config("error neuron parameters out of range".into()));
        }
        Ok(())
    }
}

/// Membrane of one error neuron. Never negative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorNeuronState {
    /// Membrane potential (mV).
    pub v: f64,
}

impl ErrorNeuronState {
    /// Integrate-and-fire step on a signed error current. The membrane is
    /// clamped at zero so the neuron only reports one sign of error.
    #[inline]
    pub fn step(self, params: &ErrorNeuronParams, i_err: f64) -> (Self, bool) {
        let k = params.dt / params.tau_me;
        let v = (self.v + k * (-self.v + i_err * params.r_me)).max(0.0);
        if v >= params.v_th_err {
            (ErrorNeuronState { v: 0.0 }, true)
        } else {
            (ErrorNeuronState { v }, false)
        }
    }
}
