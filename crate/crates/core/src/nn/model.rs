use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{avg_pool2, avg_pool2_backward, dropout_mask, relu, relu_backward, BatchNorm1d, Conv1d, Dense, Param};
use super::tensor::Tensor;
use super::{cross_entropy, ConvBlockSpec, NetConfig};
use crate::classifier::{LogProbMatrix, N_CLASSES};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One convolution block. The plain variant is conv → BN → ReLU; the
/// residual variant is `ReLU(BN(conv(ReLU(BN(conv(x))))) + shortcut(x))`
/// where the shortcut is a 1×1 convolution when channel counts differ.
/// Either is optionally followed by average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub spec: ConvBlockSpec,
    pub conv1: Conv1d,
    pub bn1: Option<BatchNorm1d>,
    pub conv2: Option<Conv1d>,
    pub bn2: Option<BatchNorm1d>,
    pub shortcut: Option<Conv1d>,
    cache: Option<BlockCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct BlockCache {
    /// Output of the first ReLU (residual only).
    inner: Option<Tensor>,
    /// Output of the final ReLU, before pooling.
    out: Tensor,
}

impl ConvBlock {
    pub fn new(spec: ConvBlockSpec, rng: &mut ChaCha8Rng) -> Self {
        let bn = |c| spec.batch_norm.then(|| BatchNorm1d::new(c));
        let conv1 = Conv1d::new(spec.in_channels, spec.out_channels, spec.kernel, spec.padding, rng);
        let (conv2, bn2, shortcut) = if spec.residual {
            let conv2 = Conv1d::new(spec.out_channels, spec.out_channels, spec.kernel, spec.padding, rng);
            let shortcut = (spec.in_channels != spec.out_channels)
                .then(|| Conv1d::new(spec.in_channels, spec.out_channels, 1, 0, rng));
            (Some(conv2), bn(spec.out_channels), shortcut)
        } else {
            (None, None, None)
        };
        Self { spec, conv1, bn1: bn(spec.out_channels), conv2, bn2, shortcut, cache: None }
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.channels != self.spec.in_channels {
            return Err(Error::Dimension { expected: self.spec.in_channels, got: x.channels });
        }
        Ok(())
    }

    /// Evaluation-mode forward (running batch-norm statistics).
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut h = self.conv1.infer(x);
        if let Some(bn) = &self.bn1 {
            h = bn.infer(&h);
        }
        relu(&mut h.data);
        if let Some(conv2) = &self.conv2 {
            h = conv2.infer(&h);
            if let Some(bn) = &self.bn2 {
                h = bn.infer(&h);
            }
            match &self.shortcut {
                Some(sc) => add_into(&mut h, &sc.infer(x)),
                None => add_into(&mut h, x),
            }
            relu(&mut h.data);
        }
        Ok(if self.spec.pool { avg_pool2(&h) } else { h })
    }

    /// Training-mode forward (batch statistics), caching for `backward`.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut h = self.conv1.forward_train(x);
        if let Some(bn) = &mut self.bn1 {
            h = bn.forward_train(&h);
        }
        relu(&mut h.data);
        let mut inner = None;
        if let Some(conv2) = &mut self.conv2 {
            let mut z = conv2.forward_train(&h);
            if let Some(bn) = &mut self.bn2 {
                z = bn.forward_train(&z);
            }
            match &mut self.shortcut {
                Some(sc) => add_into(&mut z, &sc.forward_train(x)),
                None => add_into(&mut z, x),
            }
            relu(&mut z.data);
            inner = Some(h);
            h = z;
        }
        let y = if self.spec.pool { avg_pool2(&h) } else { h.clone() };
        self.cache = Some(BlockCache { inner, out: h });
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let BlockCache { inner, out } = self.cache.take().expect("block backward without forward");
        let mut g = if self.spec.pool { avg_pool2_backward(gy, out.len) } else { gy.clone() };
        relu_backward(&mut g.data, &out.data);
        let mut skip = None;
        if let Some(conv2) = &mut self.conv2 {
            skip = Some(match &mut self.shortcut {
                Some(sc) => sc.backward(&g),
                None => g.clone(),
            });
            if let Some(bn) = &mut self.bn2 {
                g = bn.backward(&g);
            }
            g = conv2.backward(&g);
            relu_backward(&mut g.data, &inner.expect("residual cache").data);
        }
        if let Some(bn) = &mut self.bn1 {
            g = bn.backward(&g);
        }
        let mut gx = self.conv1.backward(&g);
        if let Some(s) = skip {
            add_into(&mut gx, &s);
        }
        gx
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.conv1.params().into();
        if let Some(bn) = &self.bn1 {
            out.extend(bn.params());
        }
        if let Some(c) = &self.conv2 {
            out.extend(c.params());
        }
        if let Some(bn) = &self.bn2 {
            out.extend(bn.params());
        }
        if let Some(c) = &self.shortcut {
            out.extend(c.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.conv1.params_mut().into();
        if let Some(bn) = &mut self.bn1 {
            out.extend(bn.params_mut());
        }
        if let Some(c) = &mut self.conv2 {
            out.extend(c.params_mut());
        }
        if let Some(bn) = &mut self.bn2 {
            out.extend(bn.params_mut());
        }
        if let Some(c) = &mut self.shortcut {
            out.extend(c.params_mut());
        }
        out
    }

    fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm1d> {
        self.bn1.iter().chain(self.bn2.iter())
    }

    fn batch_norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm1d> {
        self.bn1.iter_mut().chain(self.bn2.iter_mut())
    }
}

fn add_into(acc: &mut Tensor, other: &Tensor) {
    debug_assert!(acc.same_shape(other));
    acc.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
}

#[derive(Debug, Clone, PartialEq)]
struct HeadCache {
    pooled_shape: (usize, usize),
    hidden: Vec<f64>,
    mask: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetModel {
    config: NetConfig,
    pub blocks: Vec<ConvBlock>,
    pub hidden: Dense,
    pub output: Dense,
    cache: Option<HeadCache>,
}

impl NetModel {
    /// Fresh network with fan-in scaled uniform weights.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = config.blocks.iter().map(|&s| ConvBlock::new(s, &mut rng)).collect();
        let hidden = Dense::new(config.dense_input_size()?, config.dense_hidden, &mut rng);
        let output = Dense::new(config.dense_hidden, config.n_classes, &mut rng);
        Ok(Self { config, blocks, hidden, output, cache: None })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    fn input_tensor(&self, batch: &Matrix) -> Result<Tensor> {
        if batch.cols() != self.config.trace_len {
            return Err(Error::Dimension { expected: self.config.trace_len, got: batch.cols() });
        }
        if batch.rows() == 0 {
            return Err(Error::Empty);
        }
        Ok(Tensor::from_vec(batch.rows(), 1, batch.cols(), batch.as_slice().to_vec()))
    }

    /// Evaluation-mode logits, `B × 256`.
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        let mut h = self.input_tensor(batch)?;
        for block in &self.blocks {
            h = block.infer(&h)?;
        }
        let mut z = self.hidden.infer(&h.data, h.batch);
        relu(&mut z);
        let logits = self.output.infer(&z, h.batch);
        Matrix::from_vec(h.batch, self.config.n_classes, logits)
    }

    /// Training-mode logits: batch-norm batch statistics and a fresh
    /// inverted-dropout mask drawn from `rng`.
    pub fn forward_train(&mut self, batch: &Matrix, rng: &mut ChaCha8Rng) -> Result<Matrix> {
        let mut h = self.input_tensor(batch)?;
        for block in &mut self.blocks {
            h = block.forward_train(&h)?;
        }
        let mut z = self.hidden.forward_train(&h.data, h.batch);
        relu(&mut z);
        let mask = dropout_mask(z.len(), self.config.dropout_p, rng);
        let dropped: Vec<f64> = z.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let logits = self.output.forward_train(&dropped, h.batch);
        self.cache = Some(HeadCache { pooled_shape: (h.channels, h.len), hidden: z, mask });
        Matrix::from_vec(h.batch, self.config.n_classes, logits)
    }

    /// Backpropagates logit gradients, accumulating into every parameter.
    /// Returns the gradient w.r.t. the input batch.
    pub fn backward(&mut self, grad_logits: &[f64]) -> Matrix {
        let HeadCache { pooled_shape, hidden, mask } = self.cache.take().expect("backward without forward");
        let mut g = self.output.backward(grad_logits);
        g.iter_mut().zip(&mask).for_each(|(gi, m)| *gi *= m);
        relu_backward(&mut g, &hidden);
        let g = self.hidden.backward(&g);
        let batch = g.len() / (pooled_shape.0 * pooled_shape.1);
        let mut gt = Tensor::from_vec(batch, pooled_shape.0, pooled_shape.1, g);
        for block in self.blocks.iter_mut().rev() {
            gt = block.backward(&gt);
        }
        Matrix::from_vec(batch, gt.len, gt.data).expect("input gradient shape")
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Mean cross-entropy of a training-mode forward pass. Gradients are
    /// reset, then left in each parameter's `grad`.
    pub fn loss_and_grad(&mut self, batch: &Matrix, labels: &[u8], rng: &mut ChaCha8Rng) -> Result<f64> {
        if labels.len() != batch.rows() {
            return Err(Error::Dimension { expected: batch.rows(), got: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= self.config.n_classes) {
            return Err(Error::Label(bad as usize));
        }
        self.zero_grad();
        let logits = self.forward_train(batch, rng)?;
        let (loss, grad) = cross_entropy(logits.as_slice(), labels, self.config.n_classes)?;
        self.backward(&grad);
        Ok(loss)
    }

    /// Evaluation-mode mean cross-entropy.
    pub fn loss(&self, batch: &Matrix, labels: &[u8]) -> Result<f64> {
        let logits = self.forward(batch)?;
        Ok(cross_entropy(logits.as_slice(), labels, self.config.n_classes)?.0)
    }

    pub fn predict_log_proba(&self, samples: &Matrix) -> Result<LogProbMatrix> {
        // bounded memory for large attack sets
        const CHUNK: usize = 256;
        let mut out = Matrix::zeros(samples.rows(), N_CLASSES);
        let mut start = 0;
        while start < samples.rows() {
            let end = (start + CHUNK).min(samples.rows());
            let idx: Vec<usize> = (start..end).collect();
            let logits = self.forward(&samples.select_rows(&idx))?;
            for (i, r) in logits.iter_rows().enumerate() {
                out.row_mut(start + i).copy_from_slice(r);
            }
            start = end;
        }
        LogProbMatrix::from_logits(out)
    }

    /// Trainable parameters in a fixed order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.blocks.iter().flat_map(|b| b.params()).collect();
        out.extend(self.hidden.params());
        out.extend(self.output.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        out.extend(self.hidden.params_mut());
        out.extend(self.output.params_mut());
        out
    }

    /// Batch-norm running statistics as `(mean, var)` pairs, in block order.
    pub fn running_stats(&self) -> Vec<(&[f64], &[f64])> {
        self.blocks
            .iter()
            .flat_map(|b| b.batch_norms())
            .map(|bn| (bn.running_mean.as_slice(), bn.running_var.as_slice()))
            .collect()
    }

    /// Restores parameters and running statistics in the order of
    /// [`params`](Self::params) and [`running_stats`](Self::running_stats).
    pub fn load_state(&mut self, params: &[Vec<f64>], stats: &[(Vec<f64>, Vec<f64>)]) -> Result<()> {
        {
            let mine = self.params_mut();
            if mine.len() != params.len() {
                return Err(Error::Dimension { expected: mine.len(), got: params.len() });
            }
            for (p, v) in mine.iter().zip(params) {
                if p.value.len() != v.len() {
                    return Err(Error::Dimension { expected: p.value.len(), got: v.len() });
                }
            }
        }
        let n_bn = self.running_stats().len();
        if n_bn != stats.len() {
            return Err(Error::Dimension { expected: n_bn, got: stats.len() });
        }
        for ((m, v), bn) in stats.iter().zip(self.blocks.iter().flat_map(|b| b.batch_norms())) {
            if m.len() != bn.channels || v.len() != bn.channels {
                return Err(Error::Dimension { expected: bn.channels, got: m.len() });
            }
        }
        for (p, v) in self.params_mut().into_iter().zip(params) {
            p.value.copy_from_slice(v);
        }
        for ((m, v), bn) in stats.iter().zip(self.blocks.iter_mut().flat_map(|b| b.batch_norms_mut())) {
            bn.running_mean.copy_from_slice(m);
            bn.running_var.copy_from_slice(v);
        }
        Ok(())
    }
}
