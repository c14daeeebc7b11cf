//! Clocked simulation of spiking networks.
//!
//! The layer chain is split at its spiking layers. The affine layers in
//! front of the first spiking layer see the static image and are evaluated
//! once. Every later chain is driven by spikes: each spike is scattered
//! sparsely through the chain's weights, the resulting post-synaptic
//! currents pass through the synaptic filter, and the chain's constant term
//! (its response to a zero input) is added. Filtering currents rather than
//! spike trains is equivalent because the chains are affine.
//!
//! Spikes emitted on step `t` reach the next layer on step `t + 1`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convert::SnnSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{apply_linear, Layer, NetworkSpec};
use crate::neuron::{LifIntegrator, LifState};
use crate::rng::{purpose, stream};
use crate::synapse::SynapseBank;
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitVoltage {
    Zeros,
    /// Uniform in `[0, v_th)`.
    #[default]
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Start of the readout window, seconds.
    pub c0: f64,
    /// End of the presentation, seconds.
    pub c1: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init_voltage: InitVoltage,
    /// Keep the indices of the neurons that spiked on every step.
    #[serde(default)]
    pub record_rasters: bool,
    /// Keep each spiking layer's mean rate over the readout window.
    #[serde(default)]
    pub record_layer_rates: bool,
}

fn default_dt() -> f64 {
    1e-3
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            c0: 0.12,
            c1: 0.2,
            seed: 0,
            init_voltage: InitVoltage::Uniform,
            record_rasters: false,
            record_layer_rates: false,
        }
    }
}

impl SimConfig {
    pub fn steps(&self) -> usize {
        (self.c1 / self.dt).round() as usize
    }

    /// Steps `[start, end)` averaged by the readout.
    pub fn window(&self) -> (usize, usize) {
        ((self.c0 / self.dt).round() as usize, self.steps())
    }

    pub fn validate(&self, tau_s: f64) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", "must be > 0"));
        }
        if !(self.c0 >= 0.0 && self.c0 < self.c1 && self.c1.is_finite()) {
            return Err(Error::param(
                "c0",
                format!("need 0 <= c0 < c1, got c0 = {}, c1 = {}", self.c0, self.c1),
            ));
        }
        let (start, end) = self.window();
        if start >= end {
            return Err(Error::param("c1", "readout window is shorter than one step"));
        }
        if tau_s > 0.0 && self.dt >= tau_s {
            return Err(Error::param(
                "dt",
                format!("must be < tau_s = {tau_s} when synapses are filtered"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub predicted_label: usize,
    /// Output values after every step, `steps x output_len`, row-major.
    pub output_trace: Vec<f32>,
    pub output_len: usize,
    /// Mean of the output over the readout window.
    pub readout: Vec<f32>,
    /// Spikes per spiking layer.
    pub spike_counts: Vec<u64>,
    /// Total spikes times their fan-out.
    pub synop_count: u64,
    /// Spiking neurons times steps.
    pub update_count: u64,
    pub steps: usize,
    /// `rasters[layer][step]` lists the neurons that spiked.
    pub rasters: Option<Vec<Vec<Vec<u32>>>>,
    /// Per spiking layer, each neuron's spike count in the window divided by its duration.
    pub layer_rates: Option<Vec<Vec<f32>>>,
}

/// Mean of `trace` rows `[start, end)`.
pub fn window_mean(trace: &[f32], width: usize, start: usize, end: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; width];
    for row in trace[start * width..end * width].chunks_exact(width) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    let n = (end - start) as f64;
    acc.into_iter().map(|a| (a / n) as f32).collect()
}

/// Affine layers between two spiking stages.
#[derive(Debug, Clone)]
struct Chain {
    layers: Vec<usize>,
    out_len: usize,
    /// Response to a zero input.
    constant: Vec<f32>,
}

#[derive(Debug, Clone)]
struct Stage {
    integrator: LifIntegrator,
    size: usize,
    /// Chain from this stage's spikes to the next stage (or the output).
    chain: Chain,
    fan_out: Vec<u32>,
}

/// Precomputed structure of a spiking network.
#[derive(Debug, Clone)]
pub struct SimPlan<'a> {
    net: &'a NetworkSpec,
    tau_s: f64,
    dt: f64,
    input_chain: Chain,
    stages: Vec<Stage>,
}

struct Scratch {
    bufs: Vec<(Vec<f32>, Vec<bool>, Vec<usize>)>,
    current: Vec<(usize, f32)>,
    next: Vec<(usize, f32)>,
}

impl<'a> SimPlan<'a> {
    pub fn new(snn: &'a SnnSpec, dt: f64) -> Result<Self> {
        let net = snn.net();
        let spiking = snn.spiking_layers();
        if spiking.is_empty() {
            return Err(Error::param("snn", "network has no spiking layers"));
        }
        let chain = |from: usize, to: usize| -> Chain {
            let layers: Vec<usize> = (from..to).collect();
            let in_len: usize = if from == 0 {
                net.input_shape().iter().product()
            } else {
                net.shape_before(from).iter().product()
            };
            let out_len = if to == 0 {
                in_len
            } else {
                net.shape_after(to - 1).iter().product()
            };
            let constant = run_chain(net, &layers, &vec![0.0; in_len]);
            Chain {
                layers,
                out_len,
                constant,
            }
        };
        let input_chain = chain(0, spiking[0]);
        let mut stages = Vec::with_capacity(spiking.len());
        for (k, &layer) in spiking.iter().enumerate() {
            let end = spiking.get(k + 1).copied().unwrap_or(net.layers().len());
            let params = match &net.layers()[layer] {
                Layer::Nonlinearity(n) => *n.lif_params().expect("spiking layer"),
                _ => unreachable!(),
            };
            let size = net.shape_after(layer).iter().product();
            stages.push(Stage {
                integrator: LifIntegrator::new(params, dt)?,
                size,
                chain: chain(layer + 1, end),
                fan_out: Vec::new(),
            });
        }
        let mut plan = Self {
            net,
            tau_s: snn.tau_s(),
            dt,
            input_chain,
            stages,
        };
        let mut scratch = plan.scratch();
        for k in 0..plan.stages.len() {
            let fan_out = (0..plan.stages[k].size)
                .map(|i| {
                    if plan.stages[k].chain.layers.is_empty() {
                        return 0;
                    }
                    plan.propagate(k, &[i], 1.0, &mut scratch);
                    scratch.current.len() as u32
                })
                .collect();
            plan.stages[k].fan_out = fan_out;
        }
        Ok(plan)
    }

    /// Fan-out of each neuron in spiking stage `k`.
    pub fn fan_out(&self, k: usize) -> &[u32] {
        &self.stages[k].fan_out
    }

    pub fn neuron_count(&self) -> usize {
        self.stages.iter().map(|s| s.size).sum()
    }

    fn scratch(&self) -> Scratch {
        let max_len = self
            .stages
            .iter()
            .flat_map(|s| s.chain.layers.iter())
            .map(|&l| self.net.shape_after(l).iter().product::<usize>())
            .max()
            .unwrap_or(0);
        let depth = self.stages.iter().map(|s| s.chain.layers.len()).max().unwrap_or(0);
        Scratch {
            bufs: (0..depth)
                .map(|_| (vec![0.0; max_len], vec![false; max_len], Vec::new()))
                .collect(),
            current: Vec::new(),
            next: Vec::new(),
        }
    }

    /// Pushes `value` from each of `sources` in stage `k` through its chain.
    /// Leaves the sparse result in `scratch.current`.
    fn propagate(&self, k: usize, sources: &[usize], value: f32, scratch: &mut Scratch) {
        scratch.current.clear();
        scratch.current.extend(sources.iter().map(|&i| (i, value)));
        for (depth, &l) in self.stages[k].chain.layers.iter().enumerate() {
            let (out, mark, touched) = &mut scratch.bufs[depth];
            let shape = self.net.shape_before(l);
            for &(i, v) in &scratch.current {
                match &self.net.layers()[l] {
                    Layer::Conv2d(c) => c.scatter((shape[1], shape[2]), i, v, out, touched, mark),
                    Layer::Dense(d) => d.scatter(i, v, out, touched, mark),
                    Layer::AvgPool(p) => p.scatter((shape[1], shape[2]), i, v, out, touched, mark),
                    _ => unreachable!("chains hold affine layers only"),
                }
            }
            scratch.next.clear();
            for &o in touched.iter() {
                scratch.next.push((o, out[o]));
                out[o] = 0.0;
                mark[o] = false;
            }
            touched.clear();
            std::mem::swap(&mut scratch.current, &mut scratch.next);
        }
    }

    /// Runs one presentation. `index` selects the initial-voltage stream.
    pub fn run(&self, image: &Tensor, config: &SimConfig, index: u64) -> Result<RunResult> {
        config.validate(self.tau_s)?;
        if (config.dt - self.dt).abs() > 0.0 {
            return Err(Error::param("dt", "differs from the plan's time step"));
        }
        if image.shape() != self.net.input_shape() {
            return Err(Error::ShapeMismatch {
                expected: self.net.input_shape().to_vec(),
                actual: image.shape().to_vec(),
            });
        }
        let steps = config.steps();
        let (w0, w1) = config.window();
        let n_stages = self.stages.len();

        let drive = run_chain(self.net, &self.input_chain.layers, image.data());
        let mut rng = stream(config.seed, &[purpose::VOLTAGE, index]);
        let mut states: Vec<Vec<LifState>> = self
            .stages
            .iter()
            .map(|s| {
                let v_th = s.integrator.params().v_th;
                (0..s.size)
                    .map(|_| match config.init_voltage {
                        InitVoltage::Zeros => LifState::default(),
                        InitVoltage::Uniform => LifState::with_voltage(rng.random::<f64>() * v_th),
                    })
                    .collect()
            })
            .collect();
        let mut banks: Vec<SynapseBank> = self
            .stages
            .iter()
            .map(|s| SynapseBank::new(self.tau_s, self.dt, s.chain.out_len))
            .collect::<Result<_>>()?;
        let mut inputs: Vec<Vec<f32>> = self.stages.iter().map(|s| vec![0.0; s.chain.out_len]).collect();
        let mut spiked: Vec<Vec<usize>> = vec![Vec::new(); n_stages];
        let mut scratch = self.scratch();

        let out_len = self.stages[n_stages - 1].chain.out_len;
        let mut trace = Vec::with_capacity(steps * out_len);
        let mut spike_counts = vec![0u64; n_stages];
        let mut synops = 0u64;
        let mut rasters = config.record_rasters.then(|| vec![Vec::with_capacity(steps); n_stages]);
        let mut window_counts: Option<Vec<Vec<u32>>> = config
            .record_layer_rates
            .then(|| self.stages.iter().map(|s| vec![0; s.size]).collect());
        let impulse = (1.0 / self.dt) as f32;

        for step in 0..steps {
            // Neurons integrate currents built from the previous step's spikes.
            for k in 0..n_stages {
                let stage = &self.stages[k];
                let current = if k == 0 { None } else { Some(banks[k - 1].output()) };
                let constant = if k == 0 {
                    &drive
                } else {
                    &self.stages[k - 1].chain.constant
                };
                spiked[k].clear();
                for (i, state) in states[k].iter_mut().enumerate() {
                    let j = constant[i] + current.map_or(0.0, |c| c[i]);
                    if stage.integrator.step(state, j as f64) {
                        spiked[k].push(i);
                    }
                }
            }
            for k in 0..n_stages {
                let stage = &self.stages[k];
                spike_counts[k] += spiked[k].len() as u64;
                synops += spiked[k].iter().map(|&i| stage.fan_out[i] as u64).sum::<u64>();
                if let Some(r) = rasters.as_mut() {
                    r[k].push(spiked[k].iter().map(|&i| i as u32).collect());
                }
                if let Some(wc) = window_counts.as_mut() {
                    if (w0..w1).contains(&step) {
                        spiked[k].iter().for_each(|&i| wc[k][i] += 1);
                    }
                }
                let u = &mut inputs[k];
                u.iter_mut().for_each(|x| *x = 0.0);
                if stage.chain.layers.is_empty() {
                    spiked[k].iter().for_each(|&i| u[i] += impulse);
                } else if !spiked[k].is_empty() {
                    self.propagate(k, &spiked[k], impulse, &mut scratch);
                    for &(o, v) in &scratch.current {
                        u[o] += v;
                    }
                }
                banks[k].step(u);
            }
            let last = &self.stages[n_stages - 1].chain.constant;
            trace.extend(banks[n_stages - 1].output().iter().zip(last).map(|(v, c)| v + c));
        }

        let readout = window_mean(&trace, out_len, w0, w1);
        let window_seconds = (w1 - w0) as f64 * self.dt;
        Ok(RunResult {
            predicted_label: argmax(&readout),
            output_trace: trace,
            output_len: out_len,
            readout,
            spike_counts,
            synop_count: synops,
            update_count: (self.neuron_count() * steps) as u64,
            steps,
            rasters,
            layer_rates: window_counts.map(|wc| {
                wc.into_iter()
                    .map(|c| c.into_iter().map(|n| (n as f64 / window_seconds) as f32).collect())
                    .collect()
            }),
        })
    }
}

/// Evaluates the affine layers `layers` on `input`.
fn run_chain(net: &NetworkSpec, layers: &[usize], input: &[f32]) -> Vec<f32> {
    let mut x = input.to_vec();
    for &l in layers {
        let mut out = vec![0.0; net.shape_after(l).iter().product()];
        apply_linear(&net.layers()[l], net.shape_before(l), &x, &mut out);
        x = out;
    }
    x
}

/// Simulates one image presentation.
pub fn simulate_image(snn: &SnnSpec, image: &Tensor, config: &SimConfig) -> Result<RunResult> {
    simulate_indexed(snn, image, config, 0)
}

/// [`simulate_image`] with the initial voltages drawn from stream `index`.
pub fn simulate_indexed(snn: &SnnSpec, image: &Tensor, config: &SimConfig, index: u64) -> Result<RunResult> {
    config.validate(snn.tau_s())?;
    SimPlan::new(snn, config.dt)?.run(image, config, index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageOutcome {
    pub index: usize,
    pub label: usize,
    pub prediction: usize,
    pub synops: u64,
    pub updates: u64,
    pub spikes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnnEvaluation {
    /// Top-1 error in `[0, 1]`.
    pub error: f64,
    /// Per-image synaptic events divided by the presentation time, averaged over images.
    pub synops_per_s: f64,
    pub updates_per_s: f64,
    /// Spikes per neuron per second, averaged over images.
    pub mean_rate_hz: f64,
    pub images: Vec<ImageOutcome>,
}

/// Runs every image of `dataset` (in parallel) and aggregates error and event rates.
pub fn evaluate_snn(snn: &SnnSpec, dataset: &Dataset, config: &SimConfig) -> Result<SnnEvaluation> {
    if dataset.is_empty() {
        return Err(Error::param("dataset", "is empty"));
    }
    config.validate(snn.tau_s())?;
    let plan = SimPlan::new(snn, config.dt)?;
    let config = SimConfig {
        record_rasters: false,
        record_layer_rates: false,
        ..config.clone()
    };
    let images: Vec<ImageOutcome> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let input = dataset.input_for(i, snn.net().input_shape())?;
            let run = plan.run(&input, &config, i as u64)?;
            Ok(ImageOutcome {
                index: i,
                label: dataset.label(i),
                prediction: run.predicted_label,
                synops: run.synop_count,
                updates: run.update_count,
                spikes: run.spike_counts.iter().sum(),
            })
        })
        .collect::<Result<_>>()?;
    let n = images.len() as f64;
    let presentation = config.steps() as f64 * config.dt;
    let neurons = plan.neuron_count().max(1) as f64;
    Ok(SnnEvaluation {
        error: images.iter().filter(|o| o.label != o.prediction).count() as f64 / n,
        synops_per_s: images.iter().map(|o| o.synops as f64).sum::<f64>() / n / presentation,
        updates_per_s: images.iter().map(|o| o.updates as f64).sum::<f64>() / n / presentation,
        mean_rate_hz: images.iter().map(|o| o.spikes as f64).sum::<f64>() / n / neurons / presentation,
        images,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub c0: f64,
    pub c1: f64,
    pub error: f64,
}

/// Error for every `(c0, c1)` pair, from a single presentation of length
/// `max(c1_grid)` per image. Rows are ordered by `c0`, then `c1`.
pub fn accuracy_curve(
    snn: &SnnSpec,
    dataset: &Dataset,
    c0_list: &[f64],
    c1_grid: &[f64],
    config: &SimConfig,
) -> Result<Vec<CurvePoint>> {
    let c1_max = c1_grid.iter().copied().fold(f64::NAN, f64::max);
    let c1_min = c1_grid.iter().copied().fold(f64::NAN, f64::min);
    let c0_max = c0_list.iter().copied().fold(f64::NAN, f64::max);
    if c0_list.is_empty() || c1_grid.is_empty() {
        return Ok(Vec::new());
    }
    if c0_max >= c1_min || c0_list.iter().any(|&c| c < 0.0) {
        return Err(Error::param(
            "c0_list",
            format!("every c0 must lie in [0, min(c1) = {c1_min}), got max {c0_max}"),
        ));
    }
    let full = SimConfig {
        c0: 0.0,
        c1: c1_max,
        record_rasters: false,
        record_layer_rates: false,
        ..config.clone()
    };
    let pairs: Vec<(f64, f64, usize, usize)> = c0_list
        .iter()
        .flat_map(|&c0| c1_grid.iter().map(move |&c1| (c0, c1)))
        .map(|(c0, c1)| {
            let w = SimConfig { c0, c1, ..full.clone() }.window();
            (c0, c1, w.0, w.1)
        })
        .collect();
    if let Some(&(c0, c1, _, _)) = pairs.iter().find(|p| p.2 >= p.3) {
        return Err(Error::param(
            "c1_grid",
            format!("window [{c0}, {c1}) is shorter than one step"),
        ));
    }
    full.validate(snn.tau_s())?;
    let plan = SimPlan::new(snn, full.dt)?;
    let correct: Vec<Vec<bool>> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let input = dataset.input_for(i, snn.net().input_shape())?;
            let run = plan.run(&input, &full, i as u64)?;
            let label = dataset.label(i);
            Ok(pairs
                .iter()
                .map(|&(_, _, s, e)| argmax(&window_mean(&run.output_trace, run.output_len, s, e)) == label)
                .collect())
        })
        .collect::<Result<_>>()?;
    let n = dataset.len().max(1) as f64;
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(p, &(c0, c1, _, _))| CurvePoint {
            c0,
            c1,
            error: correct.iter().filter(|c| !c[p]).count() as f64 / n,
        })
        .collect())
}
