//! Layer kernels: forward, backward, and sparse scatter for the simulator.
//!
//! All spatial tensors are `(C, H, W)` row-major.

use serde::{Deserialize, Serialize};

use crate::neuron::{lif_rate, soft_lif_rate, soft_lif_rate_derivative, LifParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `out_channels x in_channels x kernel x kernel`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    /// `out_features x in_features`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Average pooling. Border windows are truncated to the input and divide by
/// the number of elements they actually cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvgPool {
    pub window: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    Relu,
    SoftLif(LifParams),
    /// Hard LIF rate curve; evaluation only (its derivative is unbounded).
    LifRate(LifParams),
    /// Spiking LIF neuron. Evaluated in rate mode as the hard rate curve.
    SpikingLif(LifParams),
}

impl Nonlinearity {
    #[inline]
    pub fn rate(&self, j: f32) -> f32 {
        match self {
            Nonlinearity::Relu => j.max(0.0),
            Nonlinearity::SoftLif(p) => soft_lif_rate(p, j as f64) as f32,
            Nonlinearity::LifRate(p) | Nonlinearity::SpikingLif(p) => lif_rate(p, j as f64) as f32,
        }
    }

    /// Derivative for backpropagation; `None` where it is not usable.
    #[inline]
    pub fn derivative(&self, j: f32) -> Option<f32> {
        match self {
            Nonlinearity::Relu => Some(if j > 0.0 { 1.0 } else { 0.0 }),
            Nonlinearity::SoftLif(p) => Some(soft_lif_rate_derivative(p, j as f64) as f32),
            Nonlinearity::LifRate(_) | Nonlinearity::SpikingLif(_) => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Relu => "relu",
            Nonlinearity::SoftLif(_) => "soft_lif",
            Nonlinearity::LifRate(_) => "lif_rate",
            Nonlinearity::SpikingLif(_) => "spiking_lif",
        }
    }

    /// Typical output magnitude: the rate at twice the threshold, or 1 for relu.
    pub fn nominal_scale(&self) -> f64 {
        match self {
            Nonlinearity::Relu => 1.0,
            Nonlinearity::SoftLif(p) => soft_lif_rate(p, 2.0 * p.v_th),
            Nonlinearity::LifRate(p) | Nonlinearity::SpikingLif(p) => lif_rate(p, 2.0 * p.v_th),
        }
    }

    pub fn lif_params(&self) -> Option<&LifParams> {
        match self {
            Nonlinearity::Relu => None,
            Nonlinearity::SoftLif(p) | Nonlinearity::LifRate(p) | Nonlinearity::SpikingLif(p) => Some(p),
        }
    }
}

/// Output extent of a convolution along one axis, or `None` if the kernel does not fit.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

/// Output extent of average pooling along one axis (windows cover every input).
pub fn pool_out_len(len: usize, window: usize, stride: usize) -> usize {
    if len <= window {
        1
    } else {
        let n = (len - window).div_ceil(stride) + 1;
        // Drop a trailing window that would start past the input.
        if (n - 1) * stride >= len {
            n - 1
        } else {
            n
        }
    }
}

/// Input range `[start, end)` covered by output index `o` of a pooling window.
#[inline]
pub fn pool_range(o: usize, window: usize, stride: usize, len: usize) -> (usize, usize) {
    let start = o * stride;
    (start, (start + window).min(len))
}

/// Kernel offsets `[k0, k1)` that land inside the input for output index `o`.
#[inline]
fn valid_taps(o: usize, stride: usize, padding: usize, kernel: usize, len: usize) -> (usize, usize) {
    let origin = (o * stride) as isize - padding as isize;
    let k0 = (-origin).max(0) as usize;
    let k1 = ((len as isize - origin).max(0) as usize).min(kernel);
    (k0.min(k1), k1)
}

impl Conv2d {
    pub fn out_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_out_len(h, self.kernel, self.stride, self.padding)?,
            conv_out_len(w, self.kernel, self.stride, self.padding)?,
        ))
    }

    #[inline]
    fn w_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_channels + ic) * self.kernel + ky) * self.kernel + kx
    }

    pub fn forward(&self, input: &[f32], h: usize, w: usize, out: &mut [f32]) {
        let (oh, ow) = self.out_dims(h, w).expect("validated shape");
        let k = self.kernel;
        for oc in 0..self.out_channels {
            let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
            plane.fill(self.bias[oc]);
            for ic in 0..self.in_channels {
                let src = &input[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wt = self.weights[self.w_index(oc, ic, ky, kx)];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &src[iy as usize * w..(iy as usize + 1) * w];
                            let dst = &mut plane[oy * ow..(oy + 1) * ow];
                            if self.stride == 1 && self.padding == 0 {
                                for (d, &s) in dst.iter_mut().zip(&row[kx..kx + ow]) {
                                    *d += wt * s;
                                }
                            } else {
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                    if ix >= 0 && ix < w as isize {
                                        *d += wt * row[ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients and, if requested, the input gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        input: &[f32],
        h: usize,
        w: usize,
        grad_out: &[f32],
        grad_w: &mut [f32],
        grad_b: &mut [f32],
        mut grad_in: Option<&mut [f32]>,
    ) {
        let (oh, ow) = self.out_dims(h, w).expect("validated shape");
        let k = self.kernel;
        for oc in 0..self.out_channels {
            let g = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
            grad_b[oc] += g.iter().sum::<f32>();
            for ic in 0..self.in_channels {
                let src = &input[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wi = self.w_index(oc, ic, ky, kx);
                        let wt = self.weights[wi];
                        let mut acc = 0.0f32;
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            let grow = &g[oy * ow..(oy + 1) * ow];
                            if self.stride == 1 && self.padding == 0 {
                                let row = &src[iy * w + kx..iy * w + kx + ow];
                                acc += grow.iter().zip(row).map(|(a, b)| a * b).sum::<f32>();
                                if let Some(gi) = grad_in.as_deref_mut() {
                                    let base = ic * h * w + iy * w + kx;
                                    for (d, &go) in gi[base..base + ow].iter_mut().zip(grow) {
                                        *d += wt * go;
                                    }
                                }
                            } else {
                                for (ox, &go) in grow.iter().enumerate() {
                                    let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let idx = iy * w + ix as usize;
                                    acc += go * src[idx];
                                    if let Some(gi) = grad_in.as_deref_mut() {
                                        gi[ic * h * w + idx] += wt * go;
                                    }
                                }
                            }
                        }
                        grad_w[wi] += acc;
                    }
                }
            }
        }
    }

    /// Adds the response to `value` at flat input index `index` into `out`,
    /// recording each touched output index whose `mark` was unset.
    pub fn scatter(
        &self,
        (h, w): (usize, usize),
        index: usize,
        value: f32,
        out: &mut [f32],
        touched: &mut Vec<usize>,
        mark: &mut [bool],
    ) {
        let (oh, ow) = self.out_dims(h, w).expect("validated shape");
        let ic = index / (h * w);
        let iy = (index / w) % h;
        let ix = index % w;
        let (s, p, k) = (self.stride, self.padding, self.kernel);
        // Outputs oy with oy*s + ky - p == iy for some ky in [0, k).
        let ys = (iy + p + 1).saturating_sub(k).div_ceil(s);
        let ye = ((iy + p) / s).min(oh.saturating_sub(1));
        let xs = (ix + p + 1).saturating_sub(k).div_ceil(s);
        let xe = ((ix + p) / s).min(ow.saturating_sub(1));
        if ys > ye || xs > xe {
            return;
        }
        for oc in 0..self.out_channels {
            for oy in ys..=ye {
                let ky = iy + p - oy * s;
                for ox in xs..=xe {
                    let kx = ix + p - ox * s;
                    let o = (oc * oh + oy) * ow + ox;
                    out[o] += self.weights[self.w_index(oc, ic, ky, kx)] * value;
                    if !mark[o] {
                        mark[o] = true;
                        touched.push(o);
                    }
                }
            }
        }
    }

    /// Number of (output, input) connections: every kernel tap that lands inside the input.
    pub fn connections(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.out_dims(h, w).expect("validated shape");
        let rows: u64 = (0..oh)
            .map(|o| {
                let (a, b) = valid_taps(o, self.stride, self.padding, self.kernel, h);
                (b - a) as u64
            })
            .sum();
        let cols: u64 = (0..ow)
            .map(|o| {
                let (a, b) = valid_taps(o, self.stride, self.padding, self.kernel, w);
                (b - a) as u64
            })
            .sum();
        rows * cols * self.in_channels as u64 * self.out_channels as u64
    }
}

impl Dense {
    pub fn forward(&self, input: &[f32], out: &mut [f32]) {
        for (o, (row, b)) in self.weights.chunks_exact(self.in_features).zip(&self.bias).enumerate() {
            out[o] = b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f32>();
        }
    }

    pub fn backward(
        &self,
        input: &[f32],
        grad_out: &[f32],
        grad_w: &mut [f32],
        grad_b: &mut [f32],
        grad_in: Option<&mut [f32]>,
    ) {
        for (o, &g) in grad_out.iter().enumerate() {
            grad_b[o] += g;
            let gw = &mut grad_w[o * self.in_features..(o + 1) * self.in_features];
            for (d, &x) in gw.iter_mut().zip(input) {
                *d += g * x;
            }
        }
        if let Some(gi) = grad_in {
            for (o, &g) in grad_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.weights[o * self.in_features..(o + 1) * self.in_features];
                for (d, &wt) in gi.iter_mut().zip(row) {
                    *d += g * wt;
                }
            }
        }
    }

    pub fn scatter(&self, index: usize, value: f32, out: &mut [f32], touched: &mut Vec<usize>, mark: &mut [bool]) {
        for o in 0..self.out_features {
            out[o] += self.weights[o * self.in_features + index] * value;
            if !mark[o] {
                mark[o] = true;
                touched.push(o);
            }
        }
    }
}

impl AvgPool {
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            pool_out_len(h, self.window, self.stride),
            pool_out_len(w, self.window, self.stride),
        )
    }

    pub fn forward(&self, input: &[f32], (c, h, w): (usize, usize, usize), out: &mut [f32]) {
        let (oh, ow) = self.out_dims(h, w);
        for ch in 0..c {
            let src = &input[ch * h * w..(ch + 1) * h * w];
            for oy in 0..oh {
                let (y0, y1) = pool_range(oy, self.window, self.stride, h);
                for ox in 0..ow {
                    let (x0, x1) = pool_range(ox, self.window, self.stride, w);
                    let mut sum = 0.0f32;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            sum += src[y * w + x];
                        }
                    }
                    out[(ch * oh + oy) * ow + ox] = sum * (1.0 / ((y1 - y0) * (x1 - x0)) as f32);
                }
            }
        }
    }

    pub fn backward(&self, grad_out: &[f32], (c, h, w): (usize, usize, usize), grad_in: &mut [f32]) {
        let (oh, ow) = self.out_dims(h, w);
        for ch in 0..c {
            for oy in 0..oh {
                let (y0, y1) = pool_range(oy, self.window, self.stride, h);
                for ox in 0..ow {
                    let (x0, x1) = pool_range(ox, self.window, self.stride, w);
                    let g = grad_out[(ch * oh + oy) * ow + ox] * (1.0 / ((y1 - y0) * (x1 - x0)) as f32);
                    for y in y0..y1 {
                        for x in x0..x1 {
                            grad_in[ch * h * w + y * w + x] += g;
                        }
                    }
                }
            }
        }
    }

    pub fn scatter(
        &self,
        (h, w): (usize, usize),
        index: usize,
        value: f32,
        out: &mut [f32],
        touched: &mut Vec<usize>,
        mark: &mut [bool],
    ) {
        let (oh, ow) = self.out_dims(h, w);
        let ch = index / (h * w);
        let iy = (index / w) % h;
        let ix = index % w;
        let (win, s) = (self.window, self.stride);
        let ys = (iy + 1).saturating_sub(win).div_ceil(s);
        let ye = (iy / s).min(oh - 1);
        let xs = (ix + 1).saturating_sub(win).div_ceil(s);
        let xe = (ix / s).min(ow - 1);
        for oy in ys..=ye {
            let (y0, y1) = pool_range(oy, win, s, h);
            for ox in xs..=xe {
                let (x0, x1) = pool_range(ox, win, s, w);
                let o = (ch * oh + oy) * ow + ox;
                out[o] += value * (1.0 / ((y1 - y0) * (x1 - x0)) as f32);
                if !mark[o] {
                    mark[o] = true;
                    touched.push(o);
                }
            }
        }
    }

    pub fn connections(&self, (c, h, w): (usize, usize, usize)) -> u64 {
        let (oh, ow) = self.out_dims(h, w);
        let rows: u64 = (0..oh)
            .map(|o| {
                let (a, b) = pool_range(o, self.window, self.stride, h);
                (b - a) as u64
            })
            .sum();
        let cols: u64 = (0..ow)
            .map(|o| {
                let (a, b) = pool_range(o, self.window, self.stride, w);
                (b - a) as u64
            })
            .sum();
        rows * cols * c as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_output_lengths() {
        assert_eq!(pool_out_len(4, 2, 2), 2);
        assert_eq!(pool_out_len(5, 2, 2), 3);
        assert_eq!(pool_out_len(24, 2, 2), 12);
        assert_eq!(pool_out_len(2, 3, 1), 1);
        assert_eq!(pool_out_len(5, 3, 1), 3);
    }

    #[test]
    fn conv_output_lengths() {
        assert_eq!(conv_out_len(28, 5, 1, 0), Some(24));
        assert_eq!(conv_out_len(28, 5, 1, 2), Some(28));
        assert_eq!(conv_out_len(7, 3, 2, 0), Some(3));
        assert_eq!(conv_out_len(2, 3, 1, 0), None);
    }

    #[test]
    fn truncated_border_window_averages_valid_elements() {
        let pool = AvgPool { window: 2, stride: 2 };
        let input: Vec<f32> = (1..=9).map(|v| v as f32).collect();
        let mut out = vec![0.0; 4];
        pool.forward(&input, (1, 3, 3), &mut out);
        assert_eq!(out, vec![3.0, 4.5, 7.5, 9.0]);
    }
}
