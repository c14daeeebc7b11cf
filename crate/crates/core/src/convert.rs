//! ANN to SNN conversion.
//!
//! Weights and biases are copied unchanged. Every soft-LIF nonlinearity
//! becomes a spiking LIF neuron with the same time constants and threshold,
//! and the smoothing `gamma` is dropped. One synaptic time constant applies
//! to every connection leaving a spiking layer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_io::{read_model, write_model};
use crate::network::{check_snn_compatible, forward, ForwardMode, Layer, NetworkSpec, Nonlinearity};
use crate::sim::{simulate_indexed, SimConfig};
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SnnSpec {
    net: NetworkSpec,
    tau_s: f64,
}

impl SnnSpec {
    /// Wraps a network whose nonlinearities are all spiking LIF.
    pub fn new(net: NetworkSpec, tau_s: f64) -> Result<Self> {
        if !(tau_s >= 0.0 && tau_s.is_finite()) {
            return Err(Error::param("tau_s", format!("must be >= 0, got {tau_s}")));
        }
        check_snn_compatible(net.layers())?;
        for (index, layer) in net.layers().iter().enumerate() {
            if let Layer::Nonlinearity(n) = layer {
                if !matches!(n, Nonlinearity::SpikingLif(_)) {
                    return Err(Error::InvalidLayer {
                        index,
                        reason: format!("spiking network contains a {} nonlinearity", n.name()),
                    });
                }
            }
        }
        Ok(Self { net, tau_s })
    }

    pub fn net(&self) -> &NetworkSpec {
        &self.net
    }

    /// Synaptic time constant in seconds; zero means unfiltered.
    pub fn tau_s(&self) -> f64 {
        self.tau_s
    }

    /// Indices of the layers that were replaced by spiking neurons.
    pub fn spiking_layers(&self) -> Vec<usize> {
        self.net
            .layers()
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Nonlinearity(_)))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn with_tau_s(&self, tau_s: f64) -> Result<Self> {
        Self::new(self.net.clone(), tau_s)
    }
}

/// Converts a trained soft-LIF network into its spiking counterpart.
pub fn convert(ann: &NetworkSpec, tau_s: f64) -> Result<SnnSpec> {
    check_snn_compatible(ann.layers())?;
    let net = ann.map_nonlinearities(|n| match n {
        Nonlinearity::SoftLif(p) | Nonlinearity::SpikingLif(p) => Ok(Nonlinearity::SpikingLif(p.hard())),
        Nonlinearity::Relu => Err(Error::UnsupportedLayer {
            kind: "relu".into(),
            reason: "only LIF-trained networks (soft_lif) can be converted".into(),
        }),
        Nonlinearity::LifRate(_) => Err(Error::UnsupportedLayer {
            kind: "lif_rate".into(),
            reason: "only LIF-trained networks (soft_lif) can be converted".into(),
        }),
    })?;
    let provenance = format!("converted from '{}' with tau_s = {tau_s} s", ann.name());
    SnnSpec::new(net.with_provenance(provenance), tau_s)
}

pub fn save_snn(snn: &SnnSpec, path: impl AsRef<Path>) -> Result<()> {
    write_model(&snn.net, Some(snn.tau_s), path)
}

pub fn load_snn(path: impl AsRef<Path>) -> Result<SnnSpec> {
    let path = path.as_ref();
    match read_model(path)? {
        (net, Some(tau_s)) => SnnSpec::new(net, tau_s),
        (_, None) => Err(Error::ModelFormat(format!(
            "{} is a rate model; convert it first",
            path.display()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDeviation {
    pub layer: usize,
    pub kind: String,
    /// Mean over probes and units of |ANN activation - SNN window average|.
    pub mean_abs_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub layers: Vec<LayerDeviation>,
    /// Fraction of probes on which both networks pick the same class.
    pub argmax_agreement: f64,
}

/// Compares ANN activations with SNN rates averaged over the readout window,
/// for every spiking layer and for the output.
pub fn validate_equivalence(
    ann: &NetworkSpec,
    snn: &SnnSpec,
    probes: &[Tensor],
    config: &SimConfig,
) -> Result<EquivalenceReport> {
    let same_structure = ann.input_shape() == snn.net.input_shape()
        && ann.layers().len() == snn.net.layers().len()
        && (0..ann.layers().len()).all(|i| ann.shape_after(i) == snn.net.shape_after(i));
    if !same_structure {
        return Err(Error::ShapeMismatch {
            expected: ann.output_shape().to_vec(),
            actual: snn.net.output_shape().to_vec(),
        });
    }
    let spiking = snn.spiking_layers();
    let out_index = ann.layers().len() - 1;
    let config = SimConfig {
        record_layer_rates: true,
        ..config.clone()
    };
    let mut sums = vec![0.0f64; spiking.len() + 1];
    let mut counts = vec![0usize; spiking.len() + 1];
    let mut agree = 0usize;
    for (p, probe) in probes.iter().enumerate() {
        let acts = forward(ann, probe, ForwardMode::Deterministic)?;
        let run = simulate_indexed(snn, probe, &config, p as u64)?;
        let rates = run.layer_rates.as_ref().expect("requested");
        for (k, &layer) in spiking.iter().enumerate() {
            sums[k] += mad(acts[layer].data(), &rates[k]) * rates[k].len() as f64;
            counts[k] += rates[k].len();
        }
        let ann_out = acts[out_index].data();
        sums[spiking.len()] += mad(ann_out, &run.readout) * ann_out.len() as f64;
        counts[spiking.len()] += ann_out.len();
        agree += usize::from(argmax(ann_out) == run.predicted_label);
    }
    let mut layers: Vec<LayerDeviation> = spiking
        .iter()
        .enumerate()
        .map(|(k, &layer)| LayerDeviation {
            layer,
            kind: snn.net.layers()[layer].name().into(),
            mean_abs_deviation: sums[k] / counts[k].max(1) as f64,
        })
        .collect();
    if spiking.last() != Some(&out_index) {
        layers.push(LayerDeviation {
            layer: out_index,
            kind: "output".into(),
            mean_abs_deviation: sums[spiking.len()] / counts[spiking.len()].max(1) as f64,
        });
    }
    Ok(EquivalenceReport {
        layers,
        argmax_agreement: agree as f64 / probes.len().max(1) as f64,
    })
}

fn mad(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>() / a.len().max(1) as f64
}
