//! Minibatch backpropagation with training noise.
//!
//! The loss is softmax cross-entropy on the final layer's output. Noise is
//! added to each nonlinearity's output where its input current is positive;
//! during backpropagation the noise is a constant offset and the clamp at
//! zero is passed straight through.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{random_crop, Dataset};
use crate::error::{Error, Result};
use crate::network::{forward, predict, ForwardMode, Layer, NetworkSpec, NoiseRng, Nonlinearity};
use crate::rng::{purpose, stream};
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd {
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd {
            momentum: default_momentum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub epochs: usize,
    /// Standard deviation (Hz) of the noise added to firing rates.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    /// Random `crop x crop` training patches; test images are center-cropped.
    #[serde(default)]
    pub crop: Option<usize>,
    /// Per-epoch multiplier applied to every soft-LIF `gamma`.
    #[serde(default)]
    pub gamma_schedule: Option<f64>,
    /// Multiplier applied to the learning rate after each epoch.
    #[serde(default)]
    pub lr_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            optimizer: Optimizer::default(),
            batch_size: 32,
            epochs: 1,
            noise_sigma: 0.0,
            seed: 0,
            crop: None,
            gamma_schedule: None,
            lr_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be > 0"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param("noise_sigma", "must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        if let Some(m) = self.gamma_schedule {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::param("gamma_schedule", "must be > 0"));
            }
        }
        if let Some(d) = self.lr_decay {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::param("lr_decay", "must be > 0"));
            }
        }
        if let Optimizer::Sgd { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::param("momentum", "must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Parameter gradients, one entry per layer (`None` for parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LayerGradient>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Gradients {
    pub fn zeros_like(net: &NetworkSpec) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => Some(LayerGradient {
                    weights: vec![0.0; c.weights.len()],
                    bias: vec![0.0; c.bias.len()],
                }),
                Layer::Dense(d) => Some(LayerGradient {
                    weights: vec![0.0; d.weights.len()],
                    bias: vec![0.0; d.bias.len()],
                }),
                _ => None,
            })
            .collect();
        Self { layers }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
                a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
            }
        }
    }

    fn scale(&mut self, k: f32) {
        for g in self.layers.iter_mut().flatten() {
            g.weights.iter_mut().for_each(|x| *x *= k);
            g.bias.iter_mut().for_each(|x| *x *= k);
        }
    }
}

/// Rejects networks whose nonlinearities have no usable derivative.
pub fn check_trainable(net: &NetworkSpec) -> Result<()> {
    for layer in net.layers() {
        if let Layer::Nonlinearity(n @ (Nonlinearity::LifRate(_) | Nonlinearity::SpikingLif(_))) = layer {
            return Err(Error::UnsupportedLayer {
                kind: n.name().into(),
                reason: "the hard LIF rate curve has an unbounded derivative at threshold; train with soft_lif".into(),
            });
        }
    }
    Ok(())
}

/// Softmax cross-entropy of `logits` against `target`, and its gradient.
fn softmax_xent(logits: &[f32], target: usize) -> (f64, Vec<f32>) {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() - (logits[target] as f64 - max);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(k, e)| (e / total - if k == target { 1.0 } else { 0.0 }) as f32)
        .collect();
    (loss, grad)
}

/// Loss and parameter gradients for one example.
///
/// `sigma > 0` draws training noise from `rng`.
pub fn backward(
    net: &NetworkSpec,
    input: &Tensor,
    target: usize,
    sigma: f64,
    rng: &mut NoiseRng,
) -> Result<(f64, Gradients)> {
    check_trainable(net)?;
    if target >= net.output_len() {
        return Err(Error::param(
            "target",
            format!("class {target} but the network has {} outputs", net.output_len()),
        ));
    }
    let mode = if sigma > 0.0 {
        ForwardMode::Noisy { sigma, rng }
    } else {
        ForwardMode::Deterministic
    };
    let acts = forward(net, input, mode)?;
    let logits = acts.last().unwrap_or(input);
    let (loss, mut grad) = softmax_xent(logits.data(), target);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }

    let mut grads = Gradients::zeros_like(net);
    for (i, layer) in net.layers().iter().enumerate().rev() {
        let x = if i == 0 { input.data() } else { acts[i - 1].data() };
        let in_shape = net.shape_before(i);
        let need_input_grad = i > 0;
        let mut grad_in = if need_input_grad {
            vec![0.0f32; x.len()]
        } else {
            Vec::new()
        };
        match layer {
            Layer::Dense(d) => {
                let g = grads.layers[i].as_mut().expect("dense has parameters");
                d.backward(
                    x,
                    &grad,
                    &mut g.weights,
                    &mut g.bias,
                    need_input_grad.then_some(grad_in.as_mut_slice()),
                );
            }
            Layer::Conv2d(c) => {
                let g = grads.layers[i].as_mut().expect("conv has parameters");
                c.backward(
                    x,
                    in_shape[1],
                    in_shape[2],
                    &grad,
                    &mut g.weights,
                    &mut g.bias,
                    need_input_grad.then_some(grad_in.as_mut_slice()),
                );
            }
            Layer::AvgPool(p) => {
                if need_input_grad {
                    p.backward(&grad, (in_shape[0], in_shape[1], in_shape[2]), &mut grad_in);
                }
            }
            Layer::Nonlinearity(n) => {
                if need_input_grad {
                    for ((gi, &go), &j) in grad_in.iter_mut().zip(&grad).zip(x) {
                        *gi = go * n.derivative(j).expect("checked trainable");
                    }
                }
            }
            Layer::MaxPool { .. } | Layer::LocalResponseNorm { .. } => {
                unreachable!("rejected at construction")
            }
        }
        if !need_input_grad {
            break;
        }
        grad = grad_in;
    }
    Ok((loss, grads))
}

/// Loss of one example without noise (used by finite-difference checks).
pub fn loss(net: &NetworkSpec, input: &Tensor, target: usize) -> Result<f64> {
    let out = predict(net, input)?;
    Ok(softmax_xent(out.data(), target).0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Test error in `[0, 1]`, when a test set was supplied.
    pub test_error: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: NetworkSpec,
    pub epochs: Vec<EpochMetrics>,
    /// Mean loss of every minibatch, in order.
    pub batch_losses: Vec<f64>,
}

enum OptimizerState {
    Sgd {
        momentum: f32,
        velocity: Vec<(Vec<f32>, Vec<f32>)>,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: i32,
        m: Vec<(Vec<f32>, Vec<f32>)>,
        v: Vec<(Vec<f32>, Vec<f32>)>,
    },
}

impl OptimizerState {
    fn new(opt: Optimizer, net: &NetworkSpec) -> Self {
        let zeros = || {
            Gradients::zeros_like(net)
                .layers
                .into_iter()
                .flatten()
                .map(|g| (g.weights, g.bias))
                .collect::<Vec<_>>()
        };
        match opt {
            Optimizer::Sgd { momentum } => OptimizerState::Sgd {
                momentum: momentum as f32,
                velocity: zeros(),
            },
            Optimizer::Adam { beta1, beta2, eps } => OptimizerState::Adam {
                beta1,
                beta2,
                eps,
                t: 0,
                m: zeros(),
                v: zeros(),
            },
        }
    }

    /// `scales[k]` is the nominal input magnitude of the `k`-th parameter
    /// layer. Weight steps are taken as if weights were expressed in units
    /// of `1 / scale`, so layers fed by firing rates (tens of Hz) and layers
    /// fed by pixels train at comparable relative speeds.
    fn apply(&mut self, net: &mut NetworkSpec, grads: &Gradients, lr: f64, scales: &[f64]) {
        let grads: Vec<&LayerGradient> = grads.layers.iter().flatten().collect();
        match self {
            OptimizerState::Sgd { momentum, velocity } => {
                for ((((w, b), (vw, vb)), g), &s) in net.params_mut().zip(velocity.iter_mut()).zip(grads).zip(scales) {
                    let lr_w = (lr / (s * s)) as f32;
                    let lr = lr as f32;
                    for ((p, v), &d) in w.iter_mut().zip(vw.iter_mut()).zip(&g.weights) {
                        *v = *momentum * *v - lr_w * d;
                        *p += *v;
                    }
                    for ((p, v), &d) in b.iter_mut().zip(vb.iter_mut()).zip(&g.bias) {
                        *v = *momentum * *v - lr * d;
                        *p += *v;
                    }
                }
            }
            OptimizerState::Adam {
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                *t += 1;
                let (b1, b2) = (*beta1, *beta2);
                let step = lr * (1.0 - b2.powi(*t)).sqrt() / (1.0 - b1.powi(*t));
                let (b1, b2, step, eps) = (b1 as f32, b2 as f32, step as f32, *eps as f32);
                let update = |p: &mut [f32], m: &mut [f32], v: &mut [f32], g: &[f32], step: f32| {
                    for (((p, m), v), &d) in p.iter_mut().zip(m).zip(v).zip(g) {
                        *m = b1 * *m + (1.0 - b1) * d;
                        *v = b2 * *v + (1.0 - b2) * d * d;
                        *p -= step * *m / (v.sqrt() + eps);
                    }
                };
                for (((((w, b), (mw, mb)), (vw, vb)), g), &s) in net
                    .params_mut()
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                    .zip(grads)
                    .zip(scales)
                {
                    update(w, mw, vw, &g.weights, step / s as f32);
                    update(b, mb, vb, &g.bias, step);
                }
            }
        }
    }
}

/// Trains `net` on `train`, evaluating on `test` after every epoch if given.
pub fn train(net: &NetworkSpec, train: &Dataset, test: Option<&Dataset>, config: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(net, train, test, config, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_observed(
    net: &NetworkSpec,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    check_trainable(net)?;
    if train.is_empty() {
        return Err(Error::param("dataset", "training set is empty"));
    }
    let mut net = net.clone();
    let base_gammas: Vec<f64> = net
        .layers()
        .iter()
        .filter_map(|l| match l {
            Layer::Nonlinearity(Nonlinearity::SoftLif(p)) => Some(p.gamma),
            _ => None,
        })
        .collect();
    let mut opt = OptimizerState::new(config.optimizer, &net);
    let scales: Vec<f64> = net
        .input_scales()
        .into_iter()
        .zip(net.layers())
        .filter(|(_, l)| matches!(l, Layer::Conv2d(_) | Layer::Dense(_)))
        .map(|(s, _)| s)
        .collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut batch_losses = Vec::new();
    let mut lr = config.learning_rate;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        if let (Some(mult), Some(&gamma)) = (config.gamma_schedule, base_gammas.first()) {
            net.set_soft_lif_gamma(gamma * mult.powi(epoch as i32));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(config.seed, &[purpose::SHUFFLE, epoch as u64]));

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<Result<(f64, Gradients)>> = batch
                .par_iter()
                .map(|&idx| {
                    let keys = [epoch as u64, idx as u64];
                    let input = match config.crop {
                        Some(size) if train.image_shape()[1] != size => {
                            let mut crop_rng = stream(config.seed, &[purpose::CROP, keys[0], keys[1]]);
                            random_crop(&train.image(idx), size, &mut crop_rng)?
                        }
                        _ => train.image(idx),
                    };
                    let mut noise_rng = stream(config.seed, &[purpose::NOISE, keys[0], keys[1]]);
                    backward(&net, &input, train.label(idx), config.noise_sigma, &mut noise_rng)
                })
                .collect();
            let mut total = Gradients::zeros_like(&net);
            let mut batch_loss = 0.0;
            for r in results {
                let (l, g) = r.map_err(|e| match e {
                    Error::NonFiniteLoss => Error::Diverged { epoch },
                    other => other,
                })?;
                batch_loss += l;
                total.add_assign(&g);
            }
            total.scale(1.0 / batch.len() as f32);
            opt.apply(&mut net, &total, lr, &scales);
            batch_losses.push(batch_loss / batch.len() as f64);
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let test_error = test.map(|t| evaluate_ann(&net, t)).transpose()?;
        let metrics = EpochMetrics {
            epoch,
            train_loss,
            test_error,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        observer(&metrics);
        epochs.push(metrics);
        if let Some(decay) = config.lr_decay {
            lr *= decay;
        }
    }
    Ok(TrainOutcome {
        net,
        epochs,
        batch_losses,
    })
}

/// Top-1 error in `[0, 1]`, noise disabled. Images larger than the network
/// input are center-cropped.
pub fn evaluate_ann(net: &NetworkSpec, dataset: &Dataset) -> Result<f64> {
    Ok(ann_predictions(net, dataset)?
        .iter()
        .enumerate()
        .filter(|&(i, &p)| p != dataset.label(i))
        .count() as f64
        / dataset.len().max(1) as f64)
}

/// Predicted class of every image.
pub fn ann_predictions(net: &NetworkSpec, dataset: &Dataset) -> Result<Vec<usize>> {
    (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let input = dataset.input_for(i, net.input_shape())?;
            Ok(argmax(predict(net, &input)?.data()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::data::Split;
    use crate::network::{Architecture, Dense, LayerConfig};
    use crate::neuron::LifParams;

    fn dense_net(weights: Vec<f32>, bias: Vec<f32>, n_in: usize, n_out: usize) -> NetworkSpec {
        NetworkSpec::new(
            "d",
            vec![n_in],
            vec![Layer::Dense(Dense {
                in_features: n_in,
                out_features: n_out,
                weights,
                bias,
            })],
        )
        .unwrap()
    }

    #[test]
    fn zero_logits_bias_gradient_is_uniform_minus_one_hot() {
        let net = dense_net(vec![0.0; 40], vec![0.0; 10], 4, 10);
        let input = Tensor::from_vec(vec![0.3, -0.1, 0.7, 0.2]);
        let (loss, g) = backward(&net, &input, 3, 0.0, &mut NoiseRng::seed_from_u64(0)).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-9);
        let bias = &g.layers[0].as_ref().unwrap().bias;
        for (k, &b) in bias.iter().enumerate() {
            let expected = 0.1 - if k == 3 { 1.0 } else { 0.0 };
            assert!((b - expected).abs() < 1e-7, "{k}: {b}");
        }
    }

    #[test]
    fn noise_does_not_touch_gradients_when_currents_are_negative() {
        let arch = Architecture {
            name: "neg".into(),
            input_shape: vec![5],
            layers: vec![
                LayerConfig::Dense { units: 6 },
                LayerConfig::SoftLif { params: None },
                LayerConfig::Dense { units: 3 },
            ],
        };
        let mut net = arch.build(&mut NoiseRng::seed_from_u64(2)).unwrap();
        // Push every hidden pre-activation below zero.
        if let Some((_, b)) = net.params_mut().next() {
            b.iter_mut().for_each(|v| *v = -50.0);
        }
        let input = Tensor::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        let (l0, g0) = backward(&net, &input, 1, 0.0, &mut NoiseRng::seed_from_u64(5)).unwrap();
        let (l1, g1) = backward(&net, &input, 1, 10.0, &mut NoiseRng::seed_from_u64(5)).unwrap();
        assert_eq!(l0, l1);
        assert_eq!(g0, g1);
    }

    #[test]
    fn rejects_hard_lif() {
        let net = NetworkSpec::new(
            "hard",
            vec![2],
            vec![Layer::Nonlinearity(Nonlinearity::LifRate(LifParams::default().hard()))],
        )
        .unwrap();
        let err = backward(
            &net,
            &Tensor::from_vec(vec![1.0, 2.0]),
            0,
            0.0,
            &mut NoiseRng::seed_from_u64(0),
        );
        assert!(matches!(err, Err(Error::UnsupportedLayer { .. })));
    }

    #[test]
    fn memorizes_a_toy_set() {
        // Four separable points, one per class.
        let pixels = vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0];
        let data = Dataset::new([1, 1, 2], pixels, vec![0, 1, 2, 3], 4, Split::Train).unwrap();
        let net = NetworkSpec::new(
            "toy",
            vec![1, 1, 2],
            vec![Layer::Dense(Dense {
                in_features: 2,
                out_features: 4,
                weights: vec![0.0; 8],
                bias: vec![0.0; 4],
            })],
        )
        .unwrap();
        let config = TrainConfig {
            learning_rate: 0.5,
            batch_size: 4,
            epochs: 50,
            ..TrainConfig::default()
        };
        let out = train(&net, &data, Some(&data), &config).unwrap();
        assert_eq!(evaluate_ann(&out.net, &data).unwrap(), 0.0);
        assert_eq!(out.epochs.last().unwrap().test_error, Some(0.0));
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                noise_sigma: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
        assert!(TrainConfig::default().validate().is_ok());
    }
}
