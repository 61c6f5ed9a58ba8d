//! Gaussian templates with a pooled diagonal covariance.

use alloc::vec;
use alloc::vec::Vec;

use crate::classifier::{LogProbMatrix, ProbClassifier, N_CLASSES};
use crate::error::{Error, Result};
use crate::math::log;
use crate::matrix::Matrix;

pub const VAR_GUARD: f64 = 1e-12;

/// Per-class means, one pooled per-sample variance and smoothed class priors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemplateModel {
    /// `256 × L`.
    pub class_means: Vec<f64>,
    pub pooled_var: Vec<f64>,
    pub class_log_prior: Vec<f64>,
    pub seen_mask: Vec<bool>,
}

impl TemplateModel {
    pub fn fit(samples: &Matrix, labels: &[u8]) -> Result<Self> {
        let n = samples.rows();
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        if labels.len() != n {
            return Err(Error::Dimension { expected: n, got: labels.len() });
        }
        let l = samples.cols();
        let mut count = [0usize; N_CLASSES];
        let mut means = vec![0.0; N_CLASSES * l];
        let mut global = vec![0.0; l];
        for (row, &y) in samples.iter_rows().zip(labels) {
            count[y as usize] += 1;
            for ((m, g), &x) in means[y as usize * l..][..l].iter_mut().zip(&mut global).zip(row) {
                *m += x;
                *g += x;
            }
        }
        global.iter_mut().for_each(|g| *g /= n as f64);
        for c in 0..N_CLASSES {
            let m = &mut means[c * l..][..l];
            if count[c] == 0 {
                m.copy_from_slice(&global);
            } else {
                m.iter_mut().for_each(|v| *v /= count[c] as f64);
            }
        }

        let mut var = vec![0.0; l];
        for (row, &y) in samples.iter_rows().zip(labels) {
            for ((v, &m), &x) in var.iter_mut().zip(&means[y as usize * l..][..l]).zip(row) {
                *v += (x - m) * (x - m);
            }
        }
        let n_seen = count.iter().filter(|&&c| c > 0).count();
        let dof = if n > n_seen { n - n_seen } else { n };
        var.iter_mut().for_each(|v| *v = (*v / dof as f64).max(VAR_GUARD));

        let denom = (n + N_CLASSES) as f64;
        let class_log_prior = count.iter().map(|&c| log((c + 1) as f64 / denom)).collect();
        Ok(Self {
            class_means: means,
            pooled_var: var,
            class_log_prior,
            seen_mask: count.iter().map(|&c| c > 0).collect(),
        })
    }

    pub fn trace_len(&self) -> usize {
        self.pooled_var.len()
    }

    pub fn class_mean(&self, class: u8) -> &[f64] {
        let l = self.trace_len();
        &self.class_means[class as usize * l..][..l]
    }

    pub fn predict_log_proba(&self, samples: &Matrix) -> Result<LogProbMatrix> {
        let l = self.trace_len();
        if samples.cols() != l || self.class_means.len() != N_CLASSES * l {
            return Err(Error::Dimension { expected: l, got: samples.cols() });
        }
        let inv2v: Vec<f64> = self.pooled_var.iter().map(|v| 0.5 / v).collect();
        let mut out = Matrix::zeros(samples.rows(), N_CLASSES);
        for (i, x) in samples.iter_rows().enumerate() {
            let row = out.row_mut(i);
            for (z, score) in row.iter_mut().enumerate() {
                let mu = &self.class_means[z * l..][..l];
                let d: f64 = x
                    .iter()
                    .zip(mu)
                    .zip(&inv2v)
                    .map(|((&xi, &mi), &w)| (xi - mi) * (xi - mi) * w)
                    .sum();
                *score = self.class_log_prior[z] - d;
            }
        }
        LogProbMatrix::from_logits(out)
    }
}

impl ProbClassifier for TemplateModel {
    fn fit(&mut self, samples: &Matrix, labels: &[u8]) -> Result<()> {
        *self = TemplateModel::fit(samples, labels)?;
        Ok(())
    }

    fn predict_log_proba(&self, samples: &Matrix) -> Result<LogProbMatrix> {
        TemplateModel::predict_log_proba(self, samples)
    }
}
