//! Feedforward networks: layer list, forward evaluation, and structural accounting.

mod layers;

pub use layers::{conv_out_len, pool_out_len, pool_range, AvgPool, Conv2d, Dense, Nonlinearity};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::LifParams;
use crate::tensor::Tensor;

/// RNG used for training noise and weight initialization.
pub type NoiseRng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv2d(Conv2d),
    Dense(Dense),
    AvgPool(AvgPool),
    Nonlinearity(Nonlinearity),
    /// Present only so architectures that use it can be named and rejected.
    MaxPool {
        window: usize,
        stride: usize,
    },
    /// Present only so architectures that use it can be named and rejected.
    LocalResponseNorm {
        size: usize,
    },
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Dense(_) => "dense",
            Layer::AvgPool(_) => "avg_pool",
            Layer::Nonlinearity(n) => n.name(),
            Layer::MaxPool { .. } => "max_pool",
            Layer::LocalResponseNorm { .. } => "local_response_norm",
        }
    }

    /// Whether the layer is an affine map of its input.
    pub fn is_linear(&self) -> bool {
        matches!(self, Layer::Conv2d(_) | Layer::Dense(_) | Layer::AvgPool(_))
    }
}

/// Rejects layers that have no spiking counterpart.
pub fn check_snn_compatible(layers: &[Layer]) -> Result<()> {
    for layer in layers {
        match layer {
            Layer::MaxPool { .. } => {
                return Err(Error::UnsupportedLayer {
                    kind: "max_pool".into(),
                    reason: "max pooling has no feedforward spiking equivalent; use avg_pool".into(),
                })
            }
            Layer::LocalResponseNorm { .. } => {
                return Err(Error::UnsupportedLayer {
                    kind: "local_response_norm".into(),
                    reason: "normalization across neurons has no feedforward spiking equivalent".into(),
                })
            }
            _ => {}
        }
    }
    Ok(())
}

/// Validated feedforward chain. Immutable except through parameter access.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    name: String,
    provenance: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
}

impl NetworkSpec {
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        check_snn_compatible(&layers)?;
        let shapes = infer_shapes(&input_shape, &layers)?;
        Ok(Self {
            name: name.into(),
            provenance: String::new(),
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Output shape of layer `i`.
    pub fn shape_after(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    /// Input shape of layer `i`.
    pub fn shape_before(&self, i: usize) -> &[usize] {
        if i == 0 {
            &self.input_shape
        } else {
            &self.shapes[i - 1]
        }
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map_or(&self.input_shape, Vec::as_slice)
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => c.weights.len() + c.bias.len(),
                Layer::Dense(d) => d.weights.len() + d.bias.len(),
                _ => 0,
            })
            .sum()
    }

    /// Replaces the nonlinearity of every layer via `f`, keeping parameters untouched.
    pub fn map_nonlinearities(&self, mut f: impl FnMut(&Nonlinearity) -> Result<Nonlinearity>) -> Result<Self> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Nonlinearity(n) => f(n).map(Layer::Nonlinearity),
                other => Ok(other.clone()),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, ..self.clone() })
    }

    /// Nominal magnitude of each layer's input: 1 for the image, otherwise
    /// the scale of the most recent nonlinearity.
    pub fn input_scales(&self) -> Vec<f64> {
        let mut scale = 1.0;
        self.layers
            .iter()
            .map(|l| {
                let s = scale;
                if let Layer::Nonlinearity(n) = l {
                    scale = n.nominal_scale();
                }
                s
            })
            .collect()
    }

    /// Mutable access to trainable parameters, in layer order: `(weights, bias)`.
    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = (&mut Vec<f32>, &mut Vec<f32>)> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Conv2d(c) => Some((&mut c.weights, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            _ => None,
        })
    }

    pub(crate) fn set_soft_lif_gamma(&mut self, gamma: f64) {
        for layer in &mut self.layers {
            if let Layer::Nonlinearity(Nonlinearity::SoftLif(p)) = layer {
                p.gamma = gamma;
            }
        }
    }
}

fn dims3(shape: &[usize], index: usize, kind: &str) -> Result<(usize, usize, usize)> {
    match shape {
        &[c, h, w] => Ok((c, h, w)),
        _ => Err(Error::InvalidLayer {
            index,
            reason: format!("{kind} needs a (channels, height, width) input, got {shape:?}"),
        }),
    }
}

fn infer_shapes(input_shape: &[usize], layers: &[Layer]) -> Result<Vec<Vec<usize>>> {
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::param("input_shape", format!("invalid shape {input_shape:?}")));
    }
    let mut shape = input_shape.to_vec();
    let mut shapes = Vec::with_capacity(layers.len());
    for (index, layer) in layers.iter().enumerate() {
        let bad = |reason: String| Error::InvalidLayer { index, reason };
        shape = match layer {
            Layer::Conv2d(conv) => {
                let (c, h, w) = dims3(&shape, index, "conv2d")?;
                if c != conv.in_channels {
                    return Err(bad(format!("expects {} input channels, got {c}", conv.in_channels)));
                }
                if conv.kernel == 0 || conv.stride == 0 {
                    return Err(bad("kernel and stride must be positive".into()));
                }
                let expected = conv.out_channels * conv.in_channels * conv.kernel * conv.kernel;
                if conv.weights.len() != expected || conv.bias.len() != conv.out_channels {
                    return Err(bad(format!(
                        "parameter sizes {}/{} do not match {expected}/{}",
                        conv.weights.len(),
                        conv.bias.len(),
                        conv.out_channels
                    )));
                }
                let (oh, ow) = conv
                    .out_dims(h, w)
                    .ok_or_else(|| bad(format!("kernel {} larger than padded input {h}x{w}", conv.kernel)))?;
                vec![conv.out_channels, oh, ow]
            }
            Layer::Dense(dense) => {
                let n: usize = shape.iter().product();
                if n != dense.in_features {
                    return Err(bad(format!("expects {} inputs, got {n}", dense.in_features)));
                }
                if dense.weights.len() != dense.in_features * dense.out_features
                    || dense.bias.len() != dense.out_features
                {
                    return Err(bad("parameter sizes do not match in/out features".into()));
                }
                vec![dense.out_features]
            }
            Layer::AvgPool(pool) => {
                let (c, h, w) = dims3(&shape, index, "avg_pool")?;
                if pool.window == 0 || pool.stride == 0 {
                    return Err(bad("window and stride must be positive".into()));
                }
                let (oh, ow) = pool.out_dims(h, w);
                vec![c, oh, ow]
            }
            Layer::Nonlinearity(n) => {
                if let Some(p) = n.lif_params() {
                    p.validate().map_err(|e| bad(e.to_string()))?;
                }
                shape
            }
            Layer::MaxPool { .. } | Layer::LocalResponseNorm { .. } => {
                unreachable!("rejected by check_snn_compatible")
            }
        };
        shapes.push(shape.clone());
    }
    Ok(shapes)
}

/// Evaluates a linear layer (`Conv2d`, `Dense`, `AvgPool`) on `input`.
pub(crate) fn apply_linear(layer: &Layer, in_shape: &[usize], input: &[f32], out: &mut [f32]) {
    match layer {
        Layer::Conv2d(conv) => conv.forward(input, in_shape[1], in_shape[2], out),
        Layer::Dense(dense) => dense.forward(input, out),
        Layer::AvgPool(pool) => pool.forward(input, (in_shape[0], in_shape[1], in_shape[2]), out),
        _ => unreachable!("not a linear layer"),
    }
}

/// Forward-pass mode.
pub enum ForwardMode<'a> {
    Deterministic,
    /// Adds `N(0, sigma)` to each nonlinearity's output where its input
    /// current is positive, then clamps at zero.
    Noisy {
        sigma: f64,
        rng: &'a mut NoiseRng,
    },
}

/// Runs the network on `input` and returns the output of every layer.
pub fn forward(net: &NetworkSpec, input: &Tensor, mode: ForwardMode<'_>) -> Result<Vec<Tensor>> {
    if input.shape() != net.input_shape() {
        return Err(Error::ShapeMismatch {
            expected: net.input_shape().to_vec(),
            actual: input.shape().to_vec(),
        });
    }
    let (sigma, mut rng) = match mode {
        ForwardMode::Deterministic => (0.0, None),
        ForwardMode::Noisy { sigma, rng } => (sigma, Some(rng)),
    };
    let noise = if sigma > 0.0 {
        Some(Normal::new(0.0f64, sigma).map_err(|e| Error::param("sigma", e.to_string()))?)
    } else {
        None
    };

    let mut acts: Vec<Tensor> = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let prev = acts.last().unwrap_or(input);
        let out_shape = net.shapes[i].clone();
        let mut out = Tensor::zeros(out_shape);
        match layer {
            Layer::Nonlinearity(n) => {
                for (o, &j) in out.data_mut().iter_mut().zip(prev.data()) {
                    *o = n.rate(j);
                }
                if let (Some(dist), Some(rng)) = (&noise, rng.as_deref_mut()) {
                    add_gated_noise(out.data_mut(), prev.data(), dist, rng);
                }
            }
            linear => apply_linear(linear, net.shape_before(i), prev.data(), out.data_mut()),
        }
        acts.push(out);
    }
    Ok(acts)
}

/// Output of the final layer only.
pub fn predict(net: &NetworkSpec, input: &Tensor) -> Result<Tensor> {
    let mut acts = forward(net, input, ForwardMode::Deterministic)?;
    Ok(acts.pop().unwrap_or_else(|| input.clone()))
}

/// Adds noise to `rates[k]` where `currents[k] > 0`, then clamps at zero.
pub(crate) fn add_gated_noise(rates: &mut [f32], currents: &[f32], dist: &Normal<f64>, rng: &mut NoiseRng) {
    for (r, &j) in rates.iter_mut().zip(currents) {
        if j > 0.0 {
            *r = (*r + dist.sample(rng) as f32).max(0.0);
        }
    }
}

/// Neuron, connection and flop counts for one image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopReport {
    pub neurons: u64,
    pub connections: u64,
    pub flops_per_image: u64,
}

/// Flop-count convention stated alongside every efficiency report.
pub const FLOP_CONVENTION: &str =
    "flops = 1 per neuron + 2 per connection; convolutions unrolled; pooling counted as connections; biases not counted";

/// Counts neurons and connections with convolutions unrolled to their
/// locally connected form. Each neuron costs one flop and each connection two.
pub fn count_flops(net: &NetworkSpec) -> FlopReport {
    let mut report = FlopReport::default();
    for (i, layer) in net.layers.iter().enumerate() {
        let in_shape = net.shape_before(i);
        match layer {
            Layer::Conv2d(conv) => report.connections += conv.connections(in_shape[1], in_shape[2]),
            Layer::Dense(d) => report.connections += (d.in_features * d.out_features) as u64,
            Layer::AvgPool(pool) => report.connections += pool.connections((in_shape[0], in_shape[1], in_shape[2])),
            Layer::Nonlinearity(_) => report.neurons += net.shape_after(i).iter().product::<usize>() as u64,
            Layer::MaxPool { .. } | Layer::LocalResponseNorm { .. } => {}
        }
    }
    report.flops_per_image = report.neurons + 2 * report.connections;
    report
}

/// Dense weight matrix equivalent to `pool` on inputs of shape `in_shape`.
pub fn pool_as_matrix(pool: &AvgPool, in_shape: &[usize]) -> Result<Dense> {
    let (c, h, w) = dims3(in_shape, 0, "avg_pool")?;
    if pool.window == 0 || pool.stride == 0 {
        return Err(Error::param("pool", "window and stride must be positive"));
    }
    let (oh, ow) = pool.out_dims(h, w);
    let (rows, cols) = (c * oh * ow, c * h * w);
    let mut weights = vec![0.0f32; rows * cols];
    for ch in 0..c {
        for oy in 0..oh {
            let (y0, y1) = pool_range(oy, pool.window, pool.stride, h);
            for ox in 0..ow {
                let (x0, x1) = pool_range(ox, pool.window, pool.stride, w);
                let row = (ch * oh + oy) * ow + ox;
                let share = 1.0 / ((y1 - y0) * (x1 - x0)) as f32;
                for y in y0..y1 {
                    for x in x0..x1 {
                        weights[row * cols + ch * h * w + y * w + x] = share;
                    }
                }
            }
        }
    }
    Ok(Dense {
        in_features: cols,
        out_features: rows,
        weights,
        bias: vec![0.0; rows],
    })
}

/// Architecture description from which a network with fresh weights is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerConfig {
    Conv2d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Dense {
        units: usize,
    },
    AvgPool {
        window: usize,
        #[serde(default)]
        stride: Option<usize>,
    },
    MaxPool {
        window: usize,
        #[serde(default)]
        stride: Option<usize>,
    },
    LocalResponseNorm {
        size: usize,
    },
    Relu,
    SoftLif {
        #[serde(default)]
        params: Option<LifParams>,
    },
    LifRate {
        #[serde(default)]
        params: Option<LifParams>,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerConfig>,
}

impl Architecture {
    /// Builds the network with fresh parameters.
    ///
    /// Weights are uniform in `±1/sqrt(fan_in)`, divided by the nominal
    /// activation scale of the layer's input (1 for pixels, the soft-LIF
    /// rate at `j = 2` for firing-rate inputs). Layers feeding a LIF
    /// nonlinearity start with biases at `v_th` so every neuron begins near
    /// its threshold; other biases start at zero.
    pub fn build(&self, rng: &mut NoiseRng) -> Result<NetworkSpec> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut shape = self.input_shape.clone();
        let mut input_scale = 1.0f64;
        for (index, cfg) in self.layers.iter().enumerate() {
            let next_lif = self.layers[index + 1..]
                .iter()
                .find(|l| !matches!(l, LayerConfig::AvgPool { .. } | LayerConfig::MaxPool { .. }))
                .and_then(|l| match l {
                    LayerConfig::SoftLif { params } | LayerConfig::LifRate { params } => {
                        Some(params.unwrap_or_default())
                    }
                    _ => None,
                });
            let layer = match *cfg {
                LayerConfig::Conv2d {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (c, _, _) = dims3(&shape, index, "conv2d")?;
                    let fan_in = c * kernel * kernel;
                    let weights = init_weights(rng, filters * fan_in, fan_in, input_scale);
                    let bias = vec![next_lif.map_or(0.0, |p| p.v_th as f32); filters];
                    Layer::Conv2d(Conv2d {
                        in_channels: c,
                        out_channels: filters,
                        kernel,
                        stride,
                        padding,
                        weights,
                        bias,
                    })
                }
                LayerConfig::Dense { units } => {
                    let fan_in: usize = shape.iter().product();
                    let weights = init_weights(rng, units * fan_in, fan_in, input_scale);
                    let bias = vec![next_lif.map_or(0.0, |p| p.v_th as f32); units];
                    Layer::Dense(Dense {
                        in_features: fan_in,
                        out_features: units,
                        weights,
                        bias,
                    })
                }
                LayerConfig::AvgPool { window, stride } => Layer::AvgPool(AvgPool {
                    window,
                    stride: stride.unwrap_or(window),
                }),
                LayerConfig::MaxPool { window, stride } => Layer::MaxPool {
                    window,
                    stride: stride.unwrap_or(window),
                },
                LayerConfig::LocalResponseNorm { size } => Layer::LocalResponseNorm { size },
                LayerConfig::Relu => Layer::Nonlinearity(Nonlinearity::Relu),
                LayerConfig::SoftLif { params } => {
                    Layer::Nonlinearity(Nonlinearity::SoftLif(params.unwrap_or_default()))
                }
                LayerConfig::LifRate { params } => {
                    Layer::Nonlinearity(Nonlinearity::LifRate(params.unwrap_or_default().hard()))
                }
            };
            if let Layer::Nonlinearity(n) = &layer {
                input_scale = n.nominal_scale();
            }
            check_snn_compatible(std::slice::from_ref(&layer))?;
            layers.push(layer);
            shape = infer_shapes(&self.input_shape, &layers)?
                .pop()
                .unwrap_or_else(|| self.input_shape.clone());
        }
        NetworkSpec::new(self.name.clone(), self.input_shape.clone(), layers)
    }
}

fn init_weights(rng: &mut NoiseRng, len: usize, fan_in: usize, input_scale: f64) -> Vec<f32> {
    let bound = 1.0 / ((fan_in.max(1) as f64).sqrt() * input_scale);
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..len).map(|_| rng.sample(dist) as f32).collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn dense(in_features: usize, out_features: usize, weights: Vec<f32>, bias: Vec<f32>) -> Layer {
        Layer::Dense(Dense {
            in_features,
            out_features,
            weights,
            bias,
        })
    }

    #[test]
    fn identity_dense_relu() {
        let net = NetworkSpec::new(
            "id",
            vec![2],
            vec![
                dense(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]),
                Layer::Nonlinearity(Nonlinearity::Relu),
            ],
        )
        .unwrap();
        let out = predict(&net, &Tensor::from_vec(vec![-1.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 2.0]);
    }

    #[test]
    fn two_by_two_average() {
        let net = NetworkSpec::new(
            "pool",
            vec![1, 2, 2],
            vec![Layer::AvgPool(AvgPool { window: 2, stride: 2 })],
        )
        .unwrap();
        let input = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(predict(&net, &input).unwrap().data(), &[2.5]);
    }

    #[test]
    fn zero_sigma_noise_is_deterministic_bit_for_bit() {
        let arch = Architecture {
            name: "t".into(),
            input_shape: vec![1, 6, 6],
            layers: vec![
                LayerConfig::Conv2d {
                    filters: 2,
                    kernel: 3,
                    stride: 1,
                    padding: 0,
                },
                LayerConfig::SoftLif { params: None },
                LayerConfig::AvgPool {
                    window: 2,
                    stride: None,
                },
                LayerConfig::Dense { units: 3 },
            ],
        };
        let net = arch.build(&mut NoiseRng::seed_from_u64(1)).unwrap();
        let input = Tensor::new(vec![1, 6, 6], (0..36).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let det = forward(&net, &input, ForwardMode::Deterministic).unwrap();
        let mut rng = NoiseRng::seed_from_u64(9);
        let noisy = forward(
            &net,
            &input,
            ForwardMode::Noisy {
                sigma: 0.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        for (a, b) in det.iter().zip(&noisy) {
            let bits_a: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn noise_only_where_current_positive() {
        let n = 64;
        let weights: Vec<f32> = (0..n * n).map(|k| if k % (n + 1) == 0 { 1.0 } else { 0.0 }).collect();
        let net = NetworkSpec::new(
            "gate",
            vec![n],
            vec![
                dense(n, n, weights, vec![0.0; n]),
                Layer::Nonlinearity(Nonlinearity::SoftLif(LifParams::default())),
            ],
        )
        .unwrap();
        let input = Tensor::from_vec((0..n).map(|i| i as f32 / 8.0 - 4.0).collect());
        let mut rng = NoiseRng::seed_from_u64(3);
        let acts = forward(
            &net,
            &input,
            ForwardMode::Noisy {
                sigma: 10.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        let (currents, rates) = (&acts[0], &acts[1]);
        let mut perturbed = 0;
        for (&j, &r) in currents.data().iter().zip(rates.data()) {
            let clean = Nonlinearity::SoftLif(LifParams::default()).rate(j);
            if j <= 0.0 {
                assert_eq!(r, clean);
            } else if r != clean {
                perturbed += 1;
            }
            assert!(r >= 0.0);
        }
        assert!(perturbed > 20);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let net = NetworkSpec::new("d", vec![3], vec![dense(3, 1, vec![0.0; 3], vec![0.0])]).unwrap();
        assert!(matches!(
            forward(&net, &Tensor::from_vec(vec![0.0; 4]), ForwardMode::Deterministic),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(NetworkSpec::new("d", vec![4], vec![dense(3, 1, vec![0.0; 3], vec![0.0])]).is_err());
    }

    #[test]
    fn rejects_max_pool_and_normalization() {
        for layer in [
            Layer::MaxPool { window: 2, stride: 2 },
            Layer::LocalResponseNorm { size: 5 },
        ] {
            let err = NetworkSpec::new("bad", vec![1, 4, 4], vec![layer]).unwrap_err();
            assert!(matches!(err, Error::UnsupportedLayer { .. }), "{err}");
        }
        let arch = Architecture {
            name: "bad".into(),
            input_shape: vec![1, 4, 4],
            layers: vec![LayerConfig::MaxPool {
                window: 2,
                stride: None,
            }],
        };
        assert!(arch.build(&mut NoiseRng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn dense_flops() {
        let net = NetworkSpec::new(
            "d",
            vec![100],
            vec![
                dense(100, 10, vec![0.0; 1000], vec![0.0; 10]),
                Layer::Nonlinearity(Nonlinearity::Relu),
            ],
        )
        .unwrap();
        assert_eq!(
            count_flops(&net),
            FlopReport {
                neurons: 10,
                connections: 1000,
                flops_per_image: 2010
            }
        );
    }

    #[test]
    fn conv_flops() {
        let conv = Conv2d {
            in_channels: 1,
            out_channels: 4,
            kernel: 3,
            stride: 1,
            padding: 0,
            weights: vec![0.0; 36],
            bias: vec![0.0; 4],
        };
        let net = NetworkSpec::new("c", vec![1, 6, 6], vec![Layer::Conv2d(conv)]).unwrap();
        assert_eq!(net.output_shape(), &[4, 4, 4]);
        assert_eq!(count_flops(&net).connections, 576);
    }

    #[test]
    fn empty_network_counts_nothing() {
        let net = NetworkSpec::new("e", vec![3], vec![]).unwrap();
        assert_eq!(count_flops(&net), FlopReport::default());
        assert_eq!(
            predict(&net, &Tensor::from_vec(vec![1.0, 2.0, 3.0])).unwrap().data(),
            &[1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn pool_matrix_two_by_two() {
        let m = pool_as_matrix(&AvgPool { window: 2, stride: 2 }, &[1, 4, 4]).unwrap();
        assert_eq!((m.out_features, m.in_features), (4, 16));
        for row in m.weights.chunks(16) {
            assert_eq!(row.iter().filter(|&&v| v == 0.25).count(), 4);
            assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 4);
        }
    }

    #[test]
    fn pool_matrix_unit_window_is_identity() {
        let m = pool_as_matrix(&AvgPool { window: 1, stride: 1 }, &[2, 3, 3]).unwrap();
        for r in 0..18 {
            for c in 0..18 {
                assert_eq!(m.weights[r * 18 + c], if r == c { 1.0 } else { 0.0 });
            }
        }
        assert!(pool_as_matrix(&AvgPool { window: 1, stride: 1 }, &[9]).is_err());
    }

    #[test]
    fn build_initializes_biases_at_threshold() {
        let arch = Architecture {
            name: "b".into(),
            input_shape: vec![4],
            layers: vec![
                LayerConfig::Dense { units: 3 },
                LayerConfig::SoftLif { params: None },
                LayerConfig::Dense { units: 2 },
            ],
        };
        let net = arch.build(&mut NoiseRng::seed_from_u64(0)).unwrap();
        match (&net.layers()[0], &net.layers()[2]) {
            (Layer::Dense(a), Layer::Dense(b)) => {
                assert!(a.bias.iter().all(|&b| b == 1.0));
                assert!(b.bias.iter().all(|&b| b == 0.0));
                let bound = 1.0 / (3.0f32.sqrt() * 55.98);
                assert!(b.weights.iter().all(|w| w.abs() <= bound * 1.01));
            }
            _ => unreachable!(),
        }
        assert_eq!(net.parameter_count(), 3 * 4 + 3 + 2 * 3 + 2);
    }
}
