//! Independent double-precision reference implementations used as test oracles.
#![allow(dead_code)]

use rand::Rng;
use softlif::network::{pool_as_matrix, predict, Architecture, AvgPool, Layer, LayerConfig, NetworkSpec, Nonlinearity};
use softlif::neuron::LifParams;
use softlif::rng::stream;
use softlif::tensor::Tensor;

/// Soft-LIF rate evaluated directly from its closed form.
pub fn soft_lif(p: &LifParams, j: f64) -> f64 {
    let x = j - p.v_th;
    let rho = if p.gamma <= 0.0 {
        x.max(0.0)
    } else {
        let z = x / p.gamma;
        p.gamma
            * if z > 30.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            }
    };
    if rho <= 0.0 {
        return 0.0;
    }
    1.0 / (p.tau_ref + p.tau_rc * (1.0 + p.v_th / rho).ln())
}

/// Hard LIF rate.
pub fn lif(p: &LifParams, j: f64) -> f64 {
    if j <= p.v_th {
        0.0
    } else {
        1.0 / (p.tau_ref + p.tau_rc * (1.0 + p.v_th / (j - p.v_th)).ln())
    }
}

/// Forward pass in f64 with explicit loops. Parameters come from `params`
/// (one `(weights, bias)` pair per parameter layer, in order).
pub fn forward(net: &NetworkSpec, params: &[(Vec<f64>, Vec<f64>)], input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    let mut k = 0;
    for (i, layer) in net.layers().iter().enumerate() {
        let shape = net.shape_before(i).to_vec();
        x = match layer {
            Layer::Conv2d(c) => {
                let (w, b) = &params[k];
                k += 1;
                let (h, wd) = (shape[1], shape[2]);
                let oh = (h + 2 * c.padding - c.kernel) / c.stride + 1;
                let ow = (wd + 2 * c.padding - c.kernel) / c.stride + 1;
                let mut out = vec![0.0; c.out_channels * oh * ow];
                for oc in 0..c.out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut s = b[oc];
                            for ic in 0..c.in_channels {
                                for ky in 0..c.kernel {
                                    for kx in 0..c.kernel {
                                        let y = (oy * c.stride + ky) as isize - c.padding as isize;
                                        let xx = (ox * c.stride + kx) as isize - c.padding as isize;
                                        if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                            continue;
                                        }
                                        let wi = ((oc * c.in_channels + ic) * c.kernel + ky) * c.kernel + kx;
                                        s += w[wi] * x[(ic * h + y as usize) * wd + xx as usize];
                                    }
                                }
                            }
                            out[(oc * oh + oy) * ow + ox] = s;
                        }
                    }
                }
                out
            }
            Layer::Dense(d) => {
                let (w, b) = &params[k];
                k += 1;
                (0..d.out_features)
                    .map(|o| b[o] + (0..d.in_features).map(|i| w[o * d.in_features + i] * x[i]).sum::<f64>())
                    .collect()
            }
            Layer::AvgPool(p) => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                // Windows start every `stride` until one reaches the end or a start leaves the input.
                let out_len = |n: usize| {
                    let (mut count, mut start) = (0, 0);
                    loop {
                        count += 1;
                        if start + p.window >= n {
                            break count;
                        }
                        start += p.stride;
                        if start >= n {
                            break count;
                        }
                    }
                };
                let (oh, ow) = (out_len(h), out_len(w));
                let mut out = vec![0.0; c * oh * ow];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut s = 0.0;
                            let mut n = 0;
                            for y in oy * p.stride..(oy * p.stride + p.window).min(h) {
                                for xx in ox * p.stride..(ox * p.stride + p.window).min(w) {
                                    s += x[(ch * h + y) * w + xx];
                                    n += 1;
                                }
                            }
                            out[(ch * oh + oy) * ow + ox] = s / n as f64;
                        }
                    }
                }
                out
            }
            Layer::Nonlinearity(n) => x
                .iter()
                .map(|&j| match n {
                    Nonlinearity::Relu => j.max(0.0),
                    Nonlinearity::SoftLif(p) => soft_lif(p, j),
                    Nonlinearity::LifRate(p) | Nonlinearity::SpikingLif(p) => lif(p, j),
                })
                .collect(),
            other => panic!("reference forward does not support {}", other.name()),
        };
    }
    x
}

pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    z.ln() + m - logits[target]
}

/// Parameters of `net` widened to f64.
pub fn params_f64(net: &NetworkSpec) -> Vec<(Vec<f64>, Vec<f64>)> {
    net.layers()
        .iter()
        .filter_map(|l| match l {
            Layer::Conv2d(c) => Some((&c.weights, &c.bias)),
            Layer::Dense(d) => Some((&d.weights, &d.bias)),
            _ => None,
        })
        .map(|(w, b)| {
            (
                w.iter().map(|&v| v as f64).collect(),
                b.iter().map(|&v| v as f64).collect(),
            )
        })
        .collect()
}

/// Worst ratio `|analytic - fd| / max(|fd|, floor)` over every parameter.
///
/// `fd` is the Richardson extrapolation of central differences with steps
/// `h` and `h / 2`, `h = 1e-3 * max(|theta|, 1e-2)`. Plain central
/// differences at that step carry an `O((h / gamma)^2)` truncation error,
/// which near threshold is comparable to the tolerance.
pub fn gradient_check(
    net: &NetworkSpec,
    input: &[f64],
    target: usize,
    analytic: &[(Vec<f32>, Vec<f32>)],
    floor: f64,
) -> (f64, usize) {
    let base = params_f64(net);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (k, (w, b)) in base.iter().enumerate() {
        for (which, len) in [(0usize, w.len()), (1, b.len())] {
            for i in 0..len {
                let theta = if which == 0 { w[i] } else { b[i] };
                let h = 1e-3 * theta.abs().max(1e-2);
                let eval = |delta: f64| {
                    let mut p = base.clone();
                    if which == 0 {
                        p[k].0[i] += delta;
                    } else {
                        p[k].1[i] += delta;
                    }
                    cross_entropy(&forward(net, &p, input), target)
                };
                let coarse = (eval(h) - eval(-h)) / (2.0 * h);
                let fine = (eval(h / 2.0) - eval(-h / 2.0)) / h;
                let fd = (4.0 * fine - coarse) / 3.0;
                let g = if which == 0 { analytic[k].0[i] } else { analytic[k].1[i] } as f64;
                let r = (g - fd).abs() / fd.abs().max(floor);
                worst = worst.max(r);
                checked += 1;
            }
        }
    }
    (worst, checked)
}

/// Copy of `layer` with every weight set to one and every bias to zero.
pub fn ones(layer: &Layer) -> Layer {
    match layer {
        Layer::Conv2d(c) => {
            let mut c = c.clone();
            c.weights.iter_mut().for_each(|w| *w = 1.0);
            c.bias.iter_mut().for_each(|b| *b = 0.0);
            Layer::Conv2d(c)
        }
        Layer::Dense(d) => {
            let mut d = d.clone();
            d.weights.iter_mut().for_each(|w| *w = 1.0);
            d.bias.iter_mut().for_each(|b| *b = 0.0);
            Layer::Dense(d)
        }
        other => other.clone(),
    }
}

/// Number of (input, output) pairs through which a unit input reaches a
/// nonzero output of the affine chain `layers`, found by probing every input.
pub fn probe_connections(layers: &[Layer], in_shape: &[usize]) -> Vec<u64> {
    let n: usize = in_shape.iter().product();
    let net = NetworkSpec::new("chain", in_shape.to_vec(), layers.iter().map(ones).collect()).unwrap();
    (0..n)
        .map(|i| {
            let mut x = vec![0.0f32; n];
            x[i] = 1.0;
            let out = predict(&net, &Tensor::new(in_shape.to_vec(), x).unwrap()).unwrap();
            out.data().iter().filter(|&&v| v != 0.0).count() as u64
        })
        .collect()
}

fn random_arch(rng: &mut impl Rng) -> Architecture {
    let c = rng.random_range(1..=2);
    let size = rng.random_range(6..=11);
    let mut layers = vec![
        LayerConfig::Conv2d {
            filters: rng.random_range(1..=3),
            kernel: rng.random_range(1..=3),
            stride: rng.random_range(1..=2),
            padding: rng.random_range(0..=1),
        },
        LayerConfig::SoftLif { params: None },
    ];
    if rng.random_bool(0.7) {
        layers.push(LayerConfig::AvgPool {
            window: rng.random_range(2..=3),
            stride: Some(rng.random_range(1..=3)),
        });
    }
    if rng.random_bool(0.5) {
        layers.push(LayerConfig::Conv2d {
            filters: rng.random_range(1..=2),
            kernel: 2,
            stride: 1,
            padding: 0,
        });
        layers.push(LayerConfig::SoftLif { params: None });
    }
    layers.push(LayerConfig::Dense {
        units: rng.random_range(2..=5),
    });
    Architecture {
        name: "random".into(),
        input_shape: vec![c, size, size],
        layers,
    }
}

/// `(neurons, connections)` of `net` counted by probing each layer.
pub fn enumerate_flops(net: &NetworkSpec) -> (u64, u64) {
    let mut neurons = 0u64;
    let mut connections = 0u64;
    for (i, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::Nonlinearity(_) => neurons += net.shape_after(i).iter().product::<usize>() as u64,
            _ => {
                connections += probe_connections(std::slice::from_ref(layer), net.shape_before(i))
                    .iter()
                    .sum::<u64>()
            }
        }
    }
    (neurons, connections)
}

/// Worst relative deviation between direct pooling and its matrix form on a random input.
pub fn pool_matrix_deviation(pool: AvgPool, [c, h, w]: [usize; 3], seed: u64) -> f64 {
    let mut rng = stream(seed, &[]);
    let x: Vec<f32> = (0..c * h * w).map(|_| rng.random_range(-5.0f32..5.0)).collect();
    let single = |layer: Layer, shape: &[usize]| NetworkSpec::new("one", shape.to_vec(), vec![layer]).unwrap();
    let input = Tensor::new(vec![c, h, w], x.clone()).unwrap();
    let direct = predict(&single(Layer::AvgPool(pool), &[c, h, w]), &input).unwrap();
    let dense = pool_as_matrix(&pool, &[c, h, w]).unwrap();
    let via_matrix = predict(&single(Layer::Dense(dense), &[c * h * w]), &Tensor::from_vec(x)).unwrap();
    assert_eq!(direct.len(), via_matrix.len());
    direct
        .data()
        .iter()
        .zip(via_matrix.data())
        .map(|(&a, &b)| ((a - b).abs() / a.abs().max(b.abs()).max(1.0)) as f64)
        .fold(0.0, f64::max)
}

/// A random small conv/pool/dense network whose shapes fit together.
pub fn random_net(rng: &mut impl Rng) -> NetworkSpec {
    loop {
        if let Ok(net) = random_arch(rng).build(&mut stream(rng.random(), &[])) {
            return net;
        }
    }
}
