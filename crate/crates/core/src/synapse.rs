//! Alpha-function synapses and the statistics of filtered spike trains.
//!
//! The synaptic kernel is the unit-area alpha function
//! `(t / tau_s^2) * exp(-t / tau_s)`. It is realized as two cascaded one-pole
//! lowpass stages, each discretized exactly for a piecewise-constant input,
//! so one filter step costs two multiply-adds. Spikes enter the filter as
//! impulses of area one (height `1 / dt` for one step), which puts the
//! filtered signal directly in Hz.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::{lif_rate, LifIntegrator, LifParams, LifState};

/// Unit-area alpha kernel value at time `t` (1/s); zero for `t < 0`.
pub fn alpha_impulse(tau_s: f64, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    t / (tau_s * tau_s) * (-t / tau_s).exp()
}

/// Coefficients of the discretized alpha filter for one `(tau_s, dt)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaFilter {
    tau_s: f64,
    dt: f64,
    pole: f64,
}

impl AlphaFilter {
    pub fn new(tau_s: f64, dt: f64) -> Result<Self> {
        if !(tau_s > 0.0 && tau_s.is_finite()) {
            return Err(Error::param("tau_s", format!("must be > 0, got {tau_s}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("must be > 0, got {dt}")));
        }
        if dt >= tau_s {
            return Err(Error::param(
                "dt",
                format!("must be smaller than tau_s = {tau_s}, got {dt}"),
            ));
        }
        Ok(Self {
            tau_s,
            dt,
            pole: (-dt / tau_s).exp(),
        })
    }

    pub fn tau_s(&self) -> f64 {
        self.tau_s
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn pole(&self) -> f64 {
        self.pole
    }

    /// Advances `state` by one step and returns the filter output.
    #[inline]
    pub fn step(&self, state: &mut AlphaFilterState, input: f64) -> f64 {
        let a = self.pole;
        state.stage1 = a * state.stage1 + (1.0 - a) * input;
        state.stage2 = a * state.stage2 + (1.0 - a) * state.stage1;
        state.stage2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaFilterState {
    pub tau_s: f64,
    pub stage1: f64,
    pub stage2: f64,
}

impl AlphaFilterState {
    pub fn new(tau_s: f64) -> Self {
        Self {
            tau_s,
            stage1: 0.0,
            stage2: 0.0,
        }
    }
}

/// One filter step on an owned state. Returns the advanced state and the output.
pub fn filter_step(state: AlphaFilterState, input: f64, dt: f64) -> Result<(AlphaFilterState, f64)> {
    let filter = AlphaFilter::new(state.tau_s, dt)?;
    let mut next = state;
    let out = filter.step(&mut next, input);
    Ok((next, out))
}

/// Synaptic filtering applied to a vector of signals, one state per signal.
///
/// `tau_s == 0` is the unfiltered synapse: the output equals the input.
#[derive(Debug, Clone)]
pub struct SynapseBank {
    pole: Option<f32>,
    stage1: Vec<f32>,
    stage2: Vec<f32>,
}

impl SynapseBank {
    pub fn new(tau_s: f64, dt: f64, len: usize) -> Result<Self> {
        let pole = if tau_s == 0.0 {
            None
        } else {
            Some(AlphaFilter::new(tau_s, dt)?.pole() as f32)
        };
        Ok(Self {
            pole,
            stage1: vec![0.0; len],
            stage2: vec![0.0; len],
        })
    }

    pub fn len(&self) -> usize {
        self.stage2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stage2.is_empty()
    }

    /// Advances every signal by one step and returns the outputs.
    pub fn step(&mut self, input: &[f32]) -> &[f32] {
        debug_assert_eq!(input.len(), self.len());
        match self.pole {
            None => self.stage2.copy_from_slice(input),
            Some(a) => {
                let b = 1.0 - a;
                for ((s1, s2), &u) in self.stage1.iter_mut().zip(&mut self.stage2).zip(input) {
                    *s1 = a * *s1 + b * u;
                    *s2 = a * *s2 + b * *s1;
                }
            }
        }
        &self.stage2
    }

    pub fn output(&self) -> &[f32] {
        &self.stage2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilteredSpikeStats {
    pub mean: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
    pub min: f64,
    pub max: f64,
    pub std: f64,
}

impl FilteredSpikeStats {
    /// Summary statistics of a sample (population std, linearly interpolated percentiles).
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            median: percentile(&sorted, 0.5),
            p25: percentile(&sorted, 0.25),
            p75: percentile(&sorted, 0.75),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            std: var.sqrt(),
        })
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Drives one LIF neuron with constant current `j`, filters its spike train
/// and summarizes the filtered signal after a transient of `5 * tau_s`.
///
/// The seed sets the initial membrane voltage (uniform in `[0, v_th)`).
pub fn spike_statistics(
    params: &LifParams,
    j: f64,
    tau_s: f64,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<FilteredSpikeStats> {
    let trace = filtered_spike_train(params, j, tau_s, duration, dt, seed)?;
    let skip = ((5.0 * tau_s) / dt).ceil() as usize;
    let kept = trace.get(skip..).unwrap_or(&[]);
    FilteredSpikeStats::from_samples(kept).ok_or_else(|| Error::param("duration", "shorter than the 5 tau_s transient"))
}

/// Filtered output of a constant-current LIF neuron, one sample per step.
pub fn filtered_spike_train(
    params: &LifParams,
    j: f64,
    tau_s: f64,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if duration.is_nan() || duration <= 0.0 {
        return Err(Error::param("duration", format!("must be > 0, got {duration}")));
    }
    let neuron = LifIntegrator::new(params.hard(), dt)?;
    let filter = if tau_s == 0.0 {
        None
    } else {
        Some(AlphaFilter::new(tau_s, dt)?)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = LifState::with_voltage(rng.random_range(0.0..params.v_th));
    let mut syn = AlphaFilterState::new(tau_s);

    let steps = (duration / dt).round() as usize;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let input = if neuron.step(&mut state, j) { 1.0 / dt } else { 0.0 };
        out.push(match &filter {
            Some(f) => f.step(&mut syn, input),
            None => input,
        });
    }
    Ok(out)
}

/// Analytic mean of the filtered train: the unit-area kernel preserves the rate.
pub fn expected_filtered_mean(params: &LifParams, j: f64) -> f64 {
    lif_rate(&params.hard(), j)
}
