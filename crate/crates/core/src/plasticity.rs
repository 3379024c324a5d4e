//! Synapse-local learning rules.
//!
//! A synapse holds its weight `w`, a slow reference weight `w_ref` and a
//! metaplastic state `m`. Per step the weight receives the error-driven
//! update and the heterosynaptic pull towards `w_ref`, both scaled by
//! `exp(-|m w|)`. Per sample `w_ref` relaxes towards `w` and `m` grows when
//! both ends of the synapse were persistently active.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// State of one connection.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SynapseState {
    /// Synaptic weight.
    pub w: f64,
    /// Consolidated reference weight.
    pub w_ref: f64,
    /// Metaplastic state, `0 <= m <= m_max`.
    pub m: f64,
}

impl SynapseState {
    /// Fresh synapse: reference equals weight, fully plastic.
    pub fn new(w: f64) -> Self {
        SynapseState { w, w_ref: w, m: 0.0 }
    }
}

/// Learning constants of one weight block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlasticityParams {
    /// Error-driven learning rate.
    pub eta: f64,
    /// Heterosynaptic decay strength.
    pub alpha: f64,
    /// Lower bound of the postsynaptic current window.
    pub i_min: f64,
    /// Upper bound of the postsynaptic current window.
    pub i_max: f64,
    /// Consolidation time constant in seconds.
    pub t_cons: f64,
    /// Metaplastic increment per qualifying sample.
    pub delta_m: f64,
    /// Metaplastic ceiling.
    pub m_max: f64,
    /// Presynaptic trace threshold for the metaplastic update.
    pub m_th_pre: f64,
    /// Postsynaptic trace threshold for the metaplastic update.
    pub m_th_post: f64,
}

impl PlasticityParams {
    /// Input to hidden block.
    pub const INPUT_HIDDEN: PlasticityParams = PlasticityParams {
        eta: 1e-2,
        alpha: 5e-4,
        i_min: -11.0,
        i_max: 13.0,
        t_cons: 25.0,
        delta_m: 0.04,
        m_max: 25.0,
        m_th_pre: 6.0,
        m_th_post: 5.0,
    };

    /// Hidden to hidden block.
    pub const HIDDEN_HIDDEN: PlasticityParams = PlasticityParams {
        m_th_pre: 5.0,
        ..Self::INPUT_HIDDEN
    };

    /// Hidden to output block: ten times smaller metaplastic increment.
    pub const HIDDEN_OUTPUT: PlasticityParams = PlasticityParams {
        delta_m: 0.004,
        m_th_pre: 5.0,
        m_th_post: 2.0,
        ..Self::INPUT_HIDDEN
    };

    /// Checks the parameter invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::Config("eta must be positive".into()));
        }
        if !(self.alpha >= 0.0) || !(self.delta_m >= 0.0) {
            return Err(Error::Config("alpha and delta_m must be non-negative".into()));
        }
        if !(self.i_min < self.i_max) {
            return Err(Error::Config("i_min must be below i_max".into()));
        }
        if !(self.t_cons > 0.0) || !(self.m_max > 0.0) {
            return Err(Error::Config("t_cons and m_max must be positive".into()));
        }
        Ok(())
    }
}

/// `exp(-|m w|)`, in `(0, 1]`.
#[inline]
pub fn plasticity_factor(m: f64, w: f64) -> f64 {
    let x = libm::fabs(m * w);
    if x == 0.0 {
        1.0
    } else {
        exp(-x)
    }
}

#[cfg(feature = "std")]
#[inline]
fn exp(x: f64) -> f64 {
    x.exp()
}

#[cfg(not(feature = "std"))]
#[inline]
fn exp(x: f64) -> f64 {
    libm::exp(x)
}

/// Surrogate-gradient gate: 1 inside the inclusive current window.
#[inline]
pub fn boxcar(i_post: f64, params: &PlasticityParams) -> f64 {
    if params.i_min <= i_post && i_post <= params.i_max {
        1.0
    } else {
        0.0
    }
}

#[inline]
fn spike_value(s: bool) -> f64 {
    if s {
        1.0
    } else {
        0.0
    }
}

/// Bare error-driven weight change `-eta * S_pre * U_post * gate(I_post)`.
#[inline]
pub fn erbp_delta(pre_spike: bool, u_post: f64, i_post: f64, params: &PlasticityParams) -> f64 {
    -(params.eta * spike_value(pre_spike) * u_post * boxcar(i_post, params))
}

/// Heterosynaptic pull towards the reference weight on a postsynaptic spike.
#[inline]
pub fn heterosynaptic_delta(syn: &SynapseState, post_spike: bool, params: &PlasticityParams) -> f64 {
    -(params.alpha * (syn.w - syn.w_ref) * spike_value(post_spike))
}

/// Full per-step weight update: both terms gated by the plasticity factor.
/// Only `w` changes.
#[inline]
pub fn combined_update(
    syn: SynapseState,
    pre_spike: bool,
    post_spike: bool,
    u_post: f64,
    i_post: f64,
    params: &PlasticityParams,
) -> SynapseState {
    let drive = params.eta * spike_value(pre_spike) * u_post * boxcar(i_post, params)
        + params.alpha * (syn.w - syn.w_ref) * spike_value(post_spike);
    SynapseState {
        w: syn.w - plasticity_factor(syn.m, syn.w) * drive,
        ..syn
    }
}

/// `k` consecutive updates of a synapse whose postsynaptic neuron spiked
/// while its presynaptic neuron stayed silent. Identical to calling
/// [`combined_update`] `k` times with `pre_spike = false, post_spike = true`.
pub fn repeated_heterosynaptic(syn: SynapseState, k: u32, params: &PlasticityParams) -> SynapseState {
    if params.alpha == 0.0 {
        return syn;
    }
    let mut s = syn;
    for _ in 0..k {
        // A synapse sitting on its reference weight is a fixed point.
        if s.w == s.w_ref {
            break;
        }
        s = combined_update(s, false, true, 0.0, 0.0, params);
    }
    s
}

/// Moves `w_ref` towards `w` over `elapsed_s` seconds of simulated time.
#[inline]
pub fn consolidate_reference(syn: SynapseState, params: &PlasticityParams, elapsed_s: f64) -> SynapseState {
    SynapseState {
        w_ref: syn.w_ref + (elapsed_s / params.t_cons) * (syn.w - syn.w_ref),
        ..syn
    }
}

/// Raises `m` by `delta_m` (capped at `m_max`) when both the pre- and
/// postsynaptic traces reach their thresholds. `m` never decreases.
#[inline]
pub fn update_metaplastic_state(
    syn: SynapseState,
    trace_pre: f64,
    trace_post: f64,
    params: &PlasticityParams,
) -> SynapseState {
    if trace_pre >= params.m_th_pre && trace_post >= params.m_th_post {
        SynapseState {
            m: (syn.m + params.delta_m).min(params.m_max).max(syn.m),
            ..syn
        }
    } else {
        syn
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    const P: PlasticityParams = PlasticityParams::INPUT_HIDDEN;

    #[test]
    fn factor_examples() {
        assert_eq!(plasticity_factor(0.0, 3.7), 1.0);
        assert_eq!(plasticity_factor(12.0, 0.0), 1.0);
        assert!((plasticity_factor(25.0, 0.1) - 0.082_084_998_623_898_8).abs() < 1e-15);
    }

    #[test]
    fn boxcar_window() {
        assert_eq!(boxcar(0.0, &P), 1.0);
        assert_eq!(boxcar(-12.0, &P), 0.0);
        assert_eq!(boxcar(13.0, &P), 1.0);
        assert_eq!(boxcar(-11.0, &P), 1.0);
        assert_eq!(boxcar(13.000_001, &P), 0.0);
    }

    #[test]
    fn erbp_examples() {
        assert_eq!(erbp_delta(false, 2.0, 0.0, &P), 0.0);
        assert_eq!(erbp_delta(true, 2.0, 20.0, &P), 0.0);
        assert!((erbp_delta(true, 2.0, 0.0, &P) + 0.02).abs() < 1e-17);
    }

    #[test]
    fn heterosynaptic_examples() {
        let s = SynapseState { w: 0.3, w_ref: 0.3, m: 0.0 };
        assert_eq!(heterosynaptic_delta(&s, true, &P), 0.0);
        let s = SynapseState { w: 1.0, w_ref: 0.0, m: 0.0 };
        assert_eq!(heterosynaptic_delta(&s, false, &P), 0.0);
        assert!((heterosynaptic_delta(&s, true, &P) + 5e-4).abs() < 1e-18);
    }

    #[test]
    fn combined_update_worked_example() {
        let s = SynapseState { w: 0.1, w_ref: 0.0, m: 25.0 };
        let n = combined_update(s, true, true, 2.0, 0.0, &P);
        let expected = 0.1 - libm::exp(-2.5) * (0.02 + 5e-4 * 0.1);
        assert!((n.w - expected).abs() < 1e-16);
        assert_eq!(n.w_ref, 0.0);
        assert_eq!(n.m, 25.0);
        // The same number written out by hand.
        assert!((n.w - 0.098_354_2).abs() < 1e-6);
    }

    #[test]
    fn combined_update_suppressed_by_large_m() {
        let s = SynapseState { w: 1.0, w_ref: 0.0, m: 50.0 };
        let n = combined_update(s, true, true, 3.0, 0.0, &P);
        let inner = 0.01 * 3.0 + 5e-4;
        assert!((n.w - s.w).abs() < 2e-22 * inner);
    }

    #[test]
    fn combined_update_with_zero_m_is_sum_of_parts() {
        let s = SynapseState { w: 0.4, w_ref: -0.2, m: 0.0 };
        let n = combined_update(s, true, true, -1.5, 2.0, &P);
        let parts = erbp_delta(true, -1.5, 2.0, &P) + heterosynaptic_delta(&s, true, &P);
        assert!((n.w - (s.w + parts)).abs() < 1e-16);
    }

    #[test]
    fn consolidation_examples() {
        let s = SynapseState { w: 0.7, w_ref: 0.7, m: 0.0 };
        assert_eq!(consolidate_reference(s, &P, 0.1), s);
        let s = SynapseState { w: 1.0, w_ref: 0.0, m: 0.0 };
        assert!((consolidate_reference(s, &P, 0.1).w_ref - 0.004).abs() < 1e-16);
    }

    #[test]
    fn consolidation_converges_geometrically() {
        let mut s = SynapseState { w: 1.0, w_ref: 0.0, m: 0.0 };
        for n in 1..=500 {
            s = consolidate_reference(s, &P, 0.1);
            let closed = 1.0 - (1.0f64 - 0.004).powi(n);
            assert!((s.w_ref - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn metaplastic_update_examples() {
        let s = SynapseState::new(0.2);
        assert_eq!(update_metaplastic_state(s, 5.9, 10.0, &P), s);
        assert_eq!(update_metaplastic_state(s, 10.0, 4.9, &P), s);
        assert!((update_metaplastic_state(s, 6.0, 5.0, &P).m - 0.04).abs() < 1e-18);
        let full = SynapseState { m: P.m_max, ..s };
        assert_eq!(update_metaplastic_state(full, 9.0, 9.0, &P).m, P.m_max);
    }

    #[test]
    fn default_block_params() {
        assert!(P.validate().is_ok());
        assert_eq!(PlasticityParams::HIDDEN_OUTPUT.delta_m, 0.004);
        assert_eq!(PlasticityParams::HIDDEN_OUTPUT.m_th_post, 2.0);
        assert!(PlasticityParams { i_min: 20.0, ..P }.validate().is_err());
        assert!(PlasticityParams { eta: 0.0, ..P }.validate().is_err());
    }

    /// Straight-line scalar transcription of the per-step rule, kept apart
    /// from the engine's helpers.
    fn scalar_rule(w: f64, w_ref: f64, m: f64, pre: f64, post: f64, u: f64, i: f64, p: &PlasticityParams) -> f64 {
        let theta = if i >= p.i_min && i <= p.i_max { 1.0 } else { 0.0 };
        let f = (-(m * w).abs()).exp();
        w - f * (p.eta * pre * u * theta + p.alpha * (w - w_ref) * post)
    }

    #[test]
    fn scripted_hundred_steps_match_scalar_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let p = PlasticityParams { m_max: 30.0, delta_m: 0.7, ..P };
            let mut syn = SynapseState::new(rng.gen_range(-0.5..0.5));
            let (mut w, mut w_ref, mut m) = (syn.w, syn.w_ref, syn.m);
            for step in 0..100 {
                let pre = rng.gen_bool(0.3);
                let post = rng.gen_bool(0.2);
                let u = rng.gen_range(-3.0..3.0);
                let i = rng.gen_range(-15.0..15.0);
                syn = combined_update(syn, pre, post, u, i, &p);
                w = scalar_rule(w, w_ref, m, pre as u8 as f64, post as u8 as f64, u, i, &p);
                if step % 10 == 9 {
                    syn = consolidate_reference(syn, &p, 0.1);
                    w_ref += 0.1 / p.t_cons * (w - w_ref);
                    let (tp, tq) = (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0));
                    syn = update_metaplastic_state(syn, tp, tq, &p);
                    if tp >= p.m_th_pre && tq >= p.m_th_post {
                        m = (m + p.delta_m).min(p.m_max);
                    }
                }
                let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
                assert!(rel(syn.w, w), "w diverged: {} vs {}", syn.w, w);
                assert!(rel(syn.w_ref, w_ref));
                assert!(rel(syn.m, m));
            }
        }
    }

    proptest! {
        #[test]
        fn factor_bounded_and_monotone(m in 0.0f64..60.0, w in -3.0f64..3.0, dm in 0.0f64..5.0) {
            let f = plasticity_factor(m, w);
            prop_assert!(f > 0.0 || (m * w).abs() > 700.0);
            prop_assert!(f <= 1.0);
            let g = plasticity_factor(m + dm, w);
            prop_assert!(g <= f);
        }

        #[test]
        fn boxcar_is_indicator_of_closed_interval(i in -30.0f64..30.0, lo in -20.0f64..0.0, width in 0.1f64..30.0) {
            let p = PlasticityParams { i_min: lo, i_max: lo + width, ..P };
            let inside = i >= lo && i <= lo + width;
            prop_assert_eq!(boxcar(i, &p) == 1.0, inside);
            prop_assert_eq!(boxcar(p.i_min, &p), 1.0);
            prop_assert_eq!(boxcar(p.i_max, &p), 1.0);
        }

        #[test]
        fn zero_alpha_zero_m_is_bare_erbp(w in -2.0f64..2.0, w_ref in -2.0f64..2.0, u in -5.0f64..5.0,
                                          i in -20.0f64..20.0, pre: bool, post: bool) {
            let p = PlasticityParams { alpha: 0.0, ..P };
            let s = SynapseState { w, w_ref, m: 0.0 };
            let n = combined_update(s, pre, post, u, i, &p);
            prop_assert_eq!(n.w.to_bits(), (w + erbp_delta(pre, u, i, &p)).to_bits());
        }

        #[test]
        fn decay_alone_approaches_reference_without_overshoot(w in -2.0f64..2.0, w_ref in -2.0f64..2.0, m in 0.0f64..50.0) {
            let p = PlasticityParams { alpha: 0.05, ..P };
            let mut s = SynapseState { w, w_ref, m };
            let mut gap = (w - w_ref).abs();
            for _ in 0..200 {
                s = combined_update(s, false, true, 0.0, 0.0, &p);
                let g = (s.w - s.w_ref).abs();
                prop_assert!(g <= gap);
                prop_assert!((s.w - s.w_ref) * (w - w_ref) >= 0.0);
                gap = g;
            }
        }

        #[test]
        fn repeated_decay_matches_stepwise(w in -2.0f64..2.0, w_ref in -2.0f64..2.0, m in 0.0f64..50.0, k in 0u32..40) {
            let s = SynapseState { w, w_ref, m };
            let mut e = s;
            for _ in 0..k {
                e = combined_update(e, false, true, 1.5, 3.0, &P);
            }
            prop_assert_eq!(repeated_heterosynaptic(s, k, &P).w.to_bits(), e.w.to_bits());
            let at_ref = SynapseState { w_ref: w, ..s };
            prop_assert_eq!(repeated_heterosynaptic(at_ref, k, &P), at_ref);
            let no_decay = PlasticityParams { alpha: 0.0, ..P };
            prop_assert_eq!(repeated_heterosynaptic(s, k, &no_decay), s);
        }

        #[test]
        fn consolidation_contracts_gap_exactly(w in -2.0f64..2.0, w_ref in -2.0f64..2.0, dt in 0.001f64..1.0) {
            let s = SynapseState { w, w_ref, m: 0.0 };
            let n = consolidate_reference(s, &P, dt);
            let expect = (1.0 - dt / P.t_cons) * (w - w_ref);
            prop_assert!(((n.w - n.w_ref) - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }

        #[test]
        fn metaplastic_state_monotone_and_capped(traces in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..300)) {
            let p = PlasticityParams { delta_m: 0.9, m_max: 7.0, ..P };
            let mut s = SynapseState::new(0.1);
            for (a, b) in traces {
                let n = update_metaplastic_state(s, a, b, &p);
                prop_assert!(n.m >= s.m);
                prop_assert!(n.m <= p.m_max);
                s = n;
            }
        }
    }
}
