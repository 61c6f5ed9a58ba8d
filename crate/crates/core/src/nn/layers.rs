//! Differentiable building blocks. Each layer caches what its backward pass
//! needs during `forward_train`; `infer` is the read-only evaluation path.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::math::sqrt;

/// A trainable array and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    fn uniform(n: usize, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        Self::new((0..n).map(|_| rng.random_range(-bound..=bound)).collect())
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    /// `(out, in, kernel)`.
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Conv1d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, padding: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / sqrt((in_channels * kernel) as f64);
        Self {
            in_channels,
            out_channels,
            kernel,
            padding,
            weight: Param::uniform(out_channels * in_channels * kernel, bound, rng),
            bias: Param::uniform(out_channels, bound, rng),
            input: None,
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        len + 2 * self.padding + 1 - self.kernel
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        debug_assert_eq!(x.channels, self.in_channels);
        let out_len = self.out_len(x.len);
        let mut y = Tensor::zeros(x.batch, self.out_channels, out_len);
        let k = self.kernel;
        for b in 0..x.batch {
            for o in 0..self.out_channels {
                let yo = y.idx(b, o, 0);
                let row = &mut y.data[yo..yo + out_len];
                row.iter_mut().for_each(|v| *v = self.bias.value[o]);
                for i in 0..self.in_channels {
                    let xi = &x.data[x.idx(b, i, 0)..][..x.len];
                    let w = &self.weight.value[(o * self.in_channels + i) * k..][..k];
                    for (kk, &wk) in w.iter().enumerate() {
                        // input position t + kk - padding
                        let (t0, t1) = valid_range(kk, self.padding, x.len, out_len);
                        for t in t0..t1 {
                            row[t] += wk * xi[t + kk - self.padding];
                        }
                    }
                }
            }
        }
        y
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let y = self.infer(x);
        self.input = Some(x.clone());
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let x = self.input.take().expect("conv backward without forward");
        let k = self.kernel;
        let mut gx = Tensor::zeros(x.batch, x.channels, x.len);
        for b in 0..x.batch {
            for o in 0..self.out_channels {
                let g = &gy.data[gy.idx(b, o, 0)..][..gy.len];
                self.bias.grad[o] += g.iter().sum::<f64>();
                for i in 0..self.in_channels {
                    let xo = x.idx(b, i, 0);
                    let woff = (o * self.in_channels + i) * k;
                    for kk in 0..k {
                        let (t0, t1) = valid_range(kk, self.padding, x.len, gy.len);
                        let wk = self.weight.value[woff + kk];
                        let mut acc = 0.0;
                        for t in t0..t1 {
                            let xi = xo + t + kk - self.padding;
                            acc += g[t] * x.data[xi];
                            gx.data[xi] += g[t] * wk;
                        }
                        self.weight.grad[woff + kk] += acc;
                    }
                }
            }
        }
        gx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

/// Output positions `t` for which `t + kk - padding` lies inside the input.
#[inline]
fn valid_range(kk: usize, padding: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let t0 = padding.saturating_sub(kk);
    let t1 = (in_len + padding).saturating_sub(kk).min(out_len);
    (t0, t1.max(t0))
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::new(vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        for c in 0..self.channels {
            let inv = 1.0 / sqrt(self.running_var[c] + BN_EPS);
            let (g, b, m) = (self.gamma.value[c], self.beta.value[c], self.running_mean[c]);
            for bb in 0..x.batch {
                let o = x.idx(bb, c, 0);
                for v in &mut y.data[o..o + x.len] {
                    *v = g * (*v - m) * inv + b;
                }
            }
        }
        y
    }

    /// Normalizes with batch statistics and updates the running estimates.
    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let n = (x.batch * x.len) as f64;
        let mut xhat = x.clone();
        let mut y = x.clone();
        let mut inv_std = vec![0.0; self.channels];
        for c in 0..self.channels {
            let mut mean = 0.0;
            for b in 0..x.batch {
                mean += x.data[x.idx(b, c, 0)..][..x.len].iter().sum::<f64>();
            }
            mean /= n;
            let mut var = 0.0;
            for b in 0..x.batch {
                var += x.data[x.idx(b, c, 0)..][..x.len].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            }
            var /= n;
            let inv = 1.0 / sqrt(var + BN_EPS);
            inv_std[c] = inv;
            let (g, bt) = (self.gamma.value[c], self.beta.value[c]);
            for b in 0..x.batch {
                let o = x.idx(b, c, 0);
                for t in o..o + x.len {
                    let h = (x.data[t] - mean) * inv;
                    xhat.data[t] = h;
                    y.data[t] = g * h + bt;
                }
            }
            let unbiased = if n > 1.0 { var * n / (n - 1.0) } else { var };
            self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * mean;
            self.running_var[c] = (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * unbiased;
        }
        self.cache = Some(BnCache { xhat, inv_std });
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let BnCache { xhat, inv_std } = self.cache.take().expect("batch norm backward without forward");
        let n = (gy.batch * gy.len) as f64;
        let mut gx = Tensor::zeros(gy.batch, gy.channels, gy.len);
        for c in 0..self.channels {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for b in 0..gy.batch {
                let o = gy.idx(b, c, 0);
                for t in o..o + gy.len {
                    sum_g += gy.data[t];
                    sum_gx += gy.data[t] * xhat.data[t];
                }
            }
            self.beta.grad[c] += sum_g;
            self.gamma.grad[c] += sum_gx;
            let g = self.gamma.value[c];
            let scale = g * inv_std[c] / n;
            for b in 0..gy.batch {
                let o = gy.idx(b, c, 0);
                for t in o..o + gy.len {
                    gx.data[t] = scale * (n * gy.data[t] - sum_g - xhat.data[t] * sum_gx);
                }
            }
        }
        gx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.gamma, &self.beta]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `(outputs, inputs)`.
    pub weight: Param,
    pub bias: Param,
    input: Option<Vec<f64>>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / sqrt(inputs as f64);
        Self {
            inputs,
            outputs,
            weight: Param::uniform(inputs * outputs, bound, rng),
            bias: Param::uniform(outputs, bound, rng),
            input: None,
        }
    }

    /// `x` is `batch × inputs`, row-major.
    pub fn infer(&self, x: &[f64], batch: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), batch * self.inputs);
        let mut y = Vec::with_capacity(batch * self.outputs);
        for xb in x.chunks_exact(self.inputs) {
            for (o, w) in self.weight.value.chunks_exact(self.inputs).enumerate() {
                y.push(self.bias.value[o] + w.iter().zip(xb).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        y
    }

    pub fn forward_train(&mut self, x: &[f64], batch: usize) -> Vec<f64> {
        let y = self.infer(x, batch);
        self.input = Some(x.to_vec());
        y
    }

    pub fn backward(&mut self, gy: &[f64]) -> Vec<f64> {
        let x = self.input.take().expect("dense backward without forward");
        let mut gx = vec![0.0; x.len()];
        for ((xb, gxb), gyb) in x.chunks_exact(self.inputs).zip(gx.chunks_exact_mut(self.inputs)).zip(gy.chunks_exact(self.outputs)) {
            for (o, &g) in gyb.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                self.bias.grad[o] += g;
                let w = &self.weight.value[o * self.inputs..][..self.inputs];
                let gw = &mut self.weight.grad[o * self.inputs..][..self.inputs];
                for j in 0..self.inputs {
                    gw[j] += g * xb[j];
                    gxb[j] += g * w[j];
                }
            }
        }
        gx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

pub fn relu(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes gradient entries where the forward output was clipped.
pub fn relu_backward(grad: &mut [f64], output: &[f64]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Average pooling, kernel 2 stride 2; a trailing odd sample is dropped.
pub fn avg_pool2(x: &Tensor) -> Tensor {
    let out_len = x.len / 2;
    let mut y = Tensor::zeros(x.batch, x.channels, out_len);
    for row in 0..x.batch * x.channels {
        let xi = &x.data[row * x.len..][..x.len];
        let yo = &mut y.data[row * out_len..][..out_len];
        for (t, v) in yo.iter_mut().enumerate() {
            *v = 0.5 * (xi[2 * t] + xi[2 * t + 1]);
        }
    }
    y
}

pub fn avg_pool2_backward(gy: &Tensor, in_len: usize) -> Tensor {
    let mut gx = Tensor::zeros(gy.batch, gy.channels, in_len);
    for row in 0..gy.batch * gy.channels {
        let g = &gy.data[row * gy.len..][..gy.len];
        let gxi = &mut gx.data[row * in_len..][..in_len];
        for (t, &v) in g.iter().enumerate() {
            gxi[2 * t] = 0.5 * v;
            gxi[2 * t + 1] = 0.5 * v;
        }
    }
    gx
}

/// Inverted dropout mask: kept units are scaled by `1 / (1 - p)`.
pub fn dropout_mask(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - p);
    (0..n).map(|_| if rng.random::<f64>() >= p { keep } else { 0.0 }).collect()
}
