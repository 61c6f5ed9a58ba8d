//! The probabilistic-classifier contract shared by every attacker.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{argmax, log_softmax, log_sum_exp};
use crate::matrix::Matrix;

/// Number of S-box output classes.
pub const N_CLASSES: usize = 256;

/// Anything that learns from labeled traces and emits normalized per-trace
/// log-probabilities over the 256 S-box outputs.
pub trait ProbClassifier {
    fn fit(&mut self, samples: &Matrix, labels: &[u8]) -> Result<()>;

    fn predict_log_proba(&self, samples: &Matrix) -> Result<LogProbMatrix>;
}

/// `N × 256` per-trace class log-probabilities. Every row log-sum-exps to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbMatrix {
    inner: Matrix,
}

impl LogProbMatrix {
    /// Wraps already-normalized rows. Rows must be finite and log-sum-exp
    /// to 0 within 1e-6.
    pub fn new(inner: Matrix) -> Result<Self> {
        if inner.cols() != N_CLASSES {
            return Err(Error::Dimension { expected: N_CLASSES, got: inner.cols() });
        }
        for row in inner.iter_rows() {
            if row.iter().any(|x| !x.is_finite()) || log_sum_exp(row).abs() > 1e-6 {
                return Err(Error::Config("log-probability row is not normalized"));
            }
        }
        Ok(Self { inner })
    }

    /// Normalizes arbitrary logits (or unnormalized log-scores) row by row.
    pub fn from_logits(mut logits: Matrix) -> Result<Self> {
        if logits.cols() != N_CLASSES {
            return Err(Error::Dimension { expected: N_CLASSES, got: logits.cols() });
        }
        for i in 0..logits.rows() {
            log_softmax(logits.row_mut(i));
        }
        Ok(Self { inner: logits })
    }

    /// Normalizes probability rows after clamping every entry at `floor`.
    pub fn from_probabilities(mut probs: Matrix, floor: f64) -> Result<Self> {
        if probs.cols() != N_CLASSES {
            return Err(Error::Dimension { expected: N_CLASSES, got: probs.cols() });
        }
        for i in 0..probs.rows() {
            let row = probs.row_mut(i);
            let mut total = 0.0;
            for p in row.iter_mut() {
                *p = p.max(floor);
                total += *p;
            }
            for p in row.iter_mut() {
                *p = crate::math::log(*p / total);
            }
        }
        Ok(Self { inner: probs })
    }

    pub fn rows(&self) -> usize {
        self.inner.rows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.inner.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix {
        self.inner
    }

    /// Prefix of the first `n` rows.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.rows());
        let idx: Vec<usize> = (0..n).collect();
        Self { inner: self.inner.select_rows(&idx) }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self { inner: self.inner.select_rows(idx) }
    }

    /// Most likely class per row, lowest index on ties.
    pub fn argmax(&self) -> Vec<u8> {
        self.inner.iter_rows().map(|r| argmax(r) as u8).collect()
    }
}
