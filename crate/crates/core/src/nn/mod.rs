//! 1D CNN and ResNet classifiers trained from scratch in double precision.
//!
//! A network is a stack of convolution blocks (conv, batch norm, ReLU,
//! average pooling; or the residual variant with two convolutions and a
//! shortcut) followed by a dense head: flatten, hidden dense + ReLU,
//! dropout, and a 256-way output layer.

pub mod layers;
mod model;
pub mod tensor;
mod train;

use alloc::vec;
use alloc::vec::Vec;

pub use model::{ConvBlock, NetModel};
pub use tensor::Tensor;
pub use train::{train, train_samples, NetClassifier, RmsProp, RmsPropConfig, TrainConfig, TrainHistory};

use crate::classifier::N_CLASSES;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub batch_norm: bool,
    /// Average pooling with kernel 2, stride 2 after the block.
    pub pool: bool,
    pub residual: bool,
}

impl ConvBlockSpec {
    pub fn new(in_channels: usize, out_channels: usize, residual: bool) -> Self {
        Self { in_channels, out_channels, kernel: 11, padding: 5, batch_norm: true, pool: true, residual }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("block channels must be positive"));
        }
        if self.kernel.is_multiple_of(2) || self.padding * 2 + 1 != self.kernel {
            return Err(Error::Config("kernel must be odd with padding (kernel - 1) / 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub trace_len: usize,
    pub blocks: Vec<ConvBlockSpec>,
    pub dense_hidden: usize,
    pub dropout_p: f64,
    pub n_classes: usize,
}

fn chained(channels: &[usize], residual: bool) -> Vec<ConvBlockSpec> {
    let mut prev = 1;
    channels
        .iter()
        .map(|&c| {
            let spec = ConvBlockSpec::new(prev, c, residual);
            prev = c;
            spec
        })
        .collect()
}

impl NetConfig {
    /// Four blocks of 64/128/256/512 channels, 4096 hidden units, dropout 0.5.
    pub fn full_scale(trace_len: usize, residual: bool) -> Self {
        Self {
            trace_len,
            blocks: chained(&[64, 128, 256, 512], residual),
            dense_hidden: 4096,
            dropout_p: 0.5,
            n_classes: N_CLASSES,
        }
    }

    /// Same topology at a size that trains on a laptop CPU.
    pub fn desk_scale(trace_len: usize, residual: bool) -> Self {
        Self {
            trace_len,
            blocks: chained(&[8, 16, 16, 32], residual),
            dense_hidden: 128,
            dropout_p: 0.5,
            n_classes: N_CLASSES,
        }
    }

    /// Custom channel progression with the default kernel.
    pub fn with_channels(trace_len: usize, channels: &[usize], dense_hidden: usize, dropout_p: f64, residual: bool) -> Self {
        Self { trace_len, blocks: chained(channels, residual), dense_hidden, dropout_p, n_classes: N_CLASSES }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("at least one block is required"));
        }
        if self.n_classes != N_CLASSES {
            return Err(Error::Config("n_classes must be 256"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("dropout_p must be in [0, 1)"));
        }
        if self.dense_hidden == 0 {
            return Err(Error::Config("dense_hidden must be positive"));
        }
        let mut prev = 1;
        for b in &self.blocks {
            b.validate()?;
            if b.in_channels != prev {
                return Err(Error::Config("block channels do not chain"));
            }
            prev = b.out_channels;
        }
        self.dense_input_size().map(|_| ())
    }

    /// Length of the feature map after the last block.
    pub fn final_len(&self) -> Result<usize> {
        let mut len = self.trace_len;
        for b in &self.blocks {
            if b.pool {
                if len < 2 {
                    return Err(Error::TraceTooShort { len: self.trace_len, blocks: self.blocks.len() });
                }
                len /= 2;
            }
        }
        if len == 0 {
            return Err(Error::TraceTooShort { len: self.trace_len, blocks: self.blocks.len() });
        }
        Ok(len)
    }

    /// Inputs of the first dense layer: channels × length after pooling.
    pub fn dense_input_size(&self) -> Result<usize> {
        let last = self.blocks.last().ok_or(Error::Config("at least one block is required"))?;
        Ok(self.final_len()? * last.out_channels)
    }
}

/// Flattened size after `n_blocks` halvings (floor) of `trace_len`.
pub fn flatten_size(trace_len: usize, n_blocks: usize, last_channels: usize) -> Result<usize> {
    if n_blocks >= usize::BITS as usize || trace_len < (1usize << n_blocks) {
        return Err(Error::TraceTooShort { len: trace_len, blocks: n_blocks });
    }
    Ok((trace_len >> n_blocks) * last_channels)
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &[f64], labels: &[u8], n_classes: usize) -> Result<(f64, Vec<f64>)> {
    let batch = labels.len();
    if logits.len() != batch * n_classes || batch == 0 {
        return Err(Error::Dimension { expected: batch * n_classes, got: logits.len() });
    }
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for ((row, g), &y) in logits.chunks_exact(n_classes).zip(grad.chunks_exact_mut(n_classes)).zip(labels) {
        if y as usize >= n_classes {
            return Err(Error::Label(y as usize));
        }
        let lse = crate::math::log_sum_exp(row);
        loss += lse - row[y as usize];
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = crate::math::exp(z - lse) / batch as f64;
        }
        g[y as usize] -= 1.0 / batch as f64;
    }
    Ok((loss / batch as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_sizes() {
        assert_eq!(flatten_size(700, 4, 512).unwrap(), 22016);
        assert_eq!(flatten_size(1400, 4, 512).unwrap(), 44544);
        assert_eq!(flatten_size(16, 4, 1).unwrap(), 1);
        assert_eq!(flatten_size(15, 4, 1), Err(Error::TraceTooShort { len: 15, blocks: 4 }));
    }

    #[test]
    fn full_scale_configs() {
        for (len, want) in [(700, 22016), (1400, 44544)] {
            for residual in [false, true] {
                let cfg = NetConfig::full_scale(len, residual);
                cfg.validate().unwrap();
                assert_eq!(cfg.dense_input_size().unwrap(), want);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = NetConfig::desk_scale(64, false);
        cfg.validate().unwrap();
        cfg.blocks[1].in_channels = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = NetConfig::desk_scale(64, false);
        cfg.blocks[0].kernel = 10;
        assert!(cfg.validate().is_err());
        let mut cfg = NetConfig::desk_scale(8, false);
        assert!(cfg.validate().is_err());
        cfg.trace_len = 16;
        cfg.validate().unwrap();
        cfg.dropout_p = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn uniform_logits_loss() {
        let (loss, grad) = cross_entropy(&[0.0; 2 * 256], &[3, 200], 256).unwrap();
        assert!((loss - (256.0f64).ln()).abs() < 1e-12);
        assert!((grad.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_loss() {
        let mut logits = [0.0; 256];
        logits[9] = 60.0;
        let (loss, _) = cross_entropy(&logits, &[9], 256).unwrap();
        assert!(loss < 1e-20);
        assert_eq!(cross_entropy(&[0.0; 4], &[7], 4), Err(Error::Label(7)));
    }
}
