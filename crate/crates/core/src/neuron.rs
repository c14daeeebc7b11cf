//! Leaky integrate-and-fire neurons.
//!
//! Three views of the same neuron live here: the closed-form steady-state
//! firing rate for a constant input current, a smoothed ("soft") version of
//! that rate curve whose derivative stays bounded at threshold, and the
//! time-stepped spiking dynamics used by the simulator.
//!
//! Membrane dynamics between spikes are `tau_rc * dv/dt = j - v`. When `v`
//! reaches `v_th` the neuron spikes, `v` is reset to zero and held there for
//! `tau_ref` seconds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this value of `x / gamma` the soft rectifier switches to its
/// exponential tail `gamma * exp(x / gamma)`, evaluated in log space.
const SOFT_TAIL_CUTOFF: f64 = -50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    /// Membrane time constant (s).
    pub tau_rc: f64,
    /// Refractory period (s).
    pub tau_ref: f64,
    /// Firing threshold.
    pub v_th: f64,
    /// Smoothing scale of the soft rectifier; `0` is the hard LIF curve.
    pub gamma: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau_rc: 0.02,
            tau_ref: 0.004,
            v_th: 1.0,
            gamma: 0.02,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_rc > 0.0 && self.tau_rc.is_finite()) {
            return Err(Error::param("tau_rc", format!("must be > 0, got {}", self.tau_rc)));
        }
        if !(self.tau_ref >= 0.0 && self.tau_ref.is_finite()) {
            return Err(Error::param("tau_ref", format!("must be >= 0, got {}", self.tau_ref)));
        }
        if !(self.v_th > 0.0 && self.v_th.is_finite()) {
            return Err(Error::param("v_th", format!("must be > 0, got {}", self.v_th)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("gamma", format!("must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        Self { gamma, ..self }
    }

    /// The same neuron with the hard threshold (`gamma = 0`).
    pub fn hard(self) -> Self {
        self.with_gamma(0.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LifState {
    pub v: f64,
    pub refractory_remaining: f64,
}

impl LifState {
    pub fn with_voltage(v: f64) -> Self {
        Self {
            v,
            refractory_remaining: 0.0,
        }
    }
}

/// Steady-state firing rate (Hz) of the hard LIF neuron for constant input `j`.
///
/// Zero at and below threshold; tends to `1 / tau_ref` as `j` grows.
pub fn lif_rate(params: &LifParams, j: f64) -> f64 {
    let x = j - params.v_th;
    if x <= 0.0 {
        return 0.0;
    }
    1.0 / (params.tau_ref + params.tau_rc * (params.v_th / x).ln_1p())
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Smoothed rectifier `gamma * log(1 + exp(x / gamma))`.
///
/// `gamma <= 0` selects the hard rectifier `max(x, 0)`.
pub fn soft_rho(gamma: f64, x: f64) -> f64 {
    if gamma <= 0.0 {
        return x.max(0.0);
    }
    let z = x / gamma;
    if z < SOFT_TAIL_CUTOFF {
        gamma * z.exp()
    } else {
        gamma * softplus(z)
    }
}

/// `ln(soft_rho(gamma, x))` for `gamma > 0`, finite for every finite `x`.
fn ln_soft_rho(gamma: f64, x: f64) -> f64 {
    let z = x / gamma;
    if z < SOFT_TAIL_CUTOFF {
        gamma.ln() + z
    } else {
        gamma.ln() + softplus(z).ln()
    }
}

/// Firing rate (Hz) of the soft LIF curve: the hard rate law with the
/// rectifier replaced by [`soft_rho`].
///
/// Positive for every finite `j` when `gamma > 0`. Falls back to
/// [`lif_rate`] when `gamma == 0`.
pub fn soft_lif_rate(params: &LifParams, j: f64) -> f64 {
    if params.gamma <= 0.0 {
        return lif_rate(params, j);
    }
    // log(1 + v_th / rho) = softplus(ln v_th - ln rho), stable for tiny rho.
    let ln_rho = ln_soft_rho(params.gamma, j - params.v_th);
    let log_term = softplus(params.v_th.ln() - ln_rho);
    1.0 / (params.tau_ref + params.tau_rc * log_term)
}

/// Analytic derivative of [`soft_lif_rate`] with respect to `j` (Hz per unit current).
pub fn soft_lif_rate_derivative(params: &LifParams, j: f64) -> f64 {
    let gamma = params.gamma;
    if gamma <= 0.0 {
        return lif_rate_derivative(params, j);
    }
    let x = j - params.v_th;
    let z = x / gamma;
    let ln_rho = ln_soft_rho(gamma, x);
    let y = params.v_th.ln() - ln_rho;
    let rate = 1.0 / (params.tau_ref + params.tau_rc * softplus(y));

    // d ln(rho) / dx = sigmoid(z) / (gamma * softplus(z)); exactly 1/gamma on the tail.
    let dln_rho = if z < SOFT_TAIL_CUTOFF {
        1.0 / gamma
    } else {
        sigmoid(z) / (gamma * softplus(z))
    };
    rate * rate * params.tau_rc * sigmoid(y) * dln_rho
}

/// Derivative of the hard rate curve; unbounded as `j` approaches threshold from above.
pub fn lif_rate_derivative(params: &LifParams, j: f64) -> f64 {
    let x = j - params.v_th;
    if x <= 0.0 {
        return 0.0;
    }
    let rate = lif_rate(params, j);
    rate * rate * params.tau_rc * params.v_th / (x * (x + params.v_th))
}

/// Exact-exponential LIF integrator for a fixed time step.
///
/// The input current is held constant across a step. A threshold crossing
/// inside the step is located by inverting the exponential, and the
/// refractory clock starts at that instant, so firing rates are not
/// quantized to multiples of `dt`.
#[derive(Debug, Clone, Copy)]
pub struct LifIntegrator {
    params: LifParams,
    dt: f64,
    decay: f64,
}

impl LifIntegrator {
    pub fn new(params: LifParams, dt: f64) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("must be > 0, got {dt}")));
        }
        Ok(Self {
            params,
            dt,
            decay: (-dt / params.tau_rc).exp(),
        })
    }

    pub fn params(&self) -> &LifParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `state` by one step under current `j`; returns whether it spiked.
    ///
    /// At most one spike is emitted per step, so rates are exact only while
    /// `dt <= tau_ref`.
    #[inline]
    pub fn step(&self, state: &mut LifState, j: f64) -> bool {
        let p = &self.params;
        let dt = self.dt;

        let refractory = state.refractory_remaining;
        if refractory >= dt {
            state.refractory_remaining = refractory - dt;
            state.v = 0.0;
            return false;
        }
        let active = dt - refractory;
        let decay = if refractory > 0.0 {
            (-active / p.tau_rc).exp()
        } else {
            self.decay
        };
        state.refractory_remaining = 0.0;

        let v0 = state.v;
        let v1 = j + (v0 - j) * decay;
        if v1 < p.v_th {
            state.v = v1.max(0.0);
            return false;
        }

        // Time from the start of integration until v reaches v_th.
        let t_cross = if j > p.v_th && v0 < p.v_th {
            (p.tau_rc * ((j - v0) / (j - p.v_th)).ln()).clamp(0.0, active)
        } else {
            0.0
        };
        let after = active - t_cross;
        if p.tau_ref > after {
            state.refractory_remaining = p.tau_ref - after;
            state.v = 0.0;
        } else {
            // Refractory period ends inside this step: integrate from reset for
            // the rest of it, capped below threshold (one spike per step).
            let rest = after - p.tau_ref;
            let v = j * -(-rest / p.tau_rc).exp_m1();
            state.v = v.clamp(0.0, prev_below(p.v_th));
        }
        true
    }
}

fn prev_below(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

/// One exact-exponential LIF step. Returns the new state and the spike count (0 or 1).
pub fn lif_step(state: LifState, params: &LifParams, j: f64, dt: f64) -> Result<(LifState, u32)> {
    let integrator = LifIntegrator::new(*params, dt)?;
    let mut next = state;
    let spiked = integrator.step(&mut next, j);
    Ok((next, u32::from(spiked)))
}
