//! Synthetic leaky traces standing in for a real EM capture.
//!
//! Each trace is Gaussian noise around a baseline, plus an additive leakage
//! term at a fixed set of time samples. The leakage is a function of the
//! S-box output of the targeted byte.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::aes::{hamming_weight, sbox_label, ByteIndex};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::traces::{FeatureIndexList, SampleType, TraceSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeakModel {
    /// `HW(label)`, in 0..=8.
    HammingWeight,
    /// `label / 255`, in 0..=1.
    Value,
}

impl LeakModel {
    #[inline]
    pub fn leak(self, label: u8) -> f64 {
        match self {
            LeakModel::HammingWeight => f64::from(hamming_weight(label)),
            LeakModel::Value => f64::from(label) / 255.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyMode {
    Fixed([u8; 16]),
    Variable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub trace_len: usize,
    pub leak_points: FeatureIndexList,
    pub leak_model: LeakModel,
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub baseline: f64,
    pub key_mode: KeyMode,
    pub byte_index: ByteIndex,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trace_len == 0 {
            return Err(Error::Config("trace_len must be positive"));
        }
        if let Some(&p) = self.leak_points.as_slice().iter().find(|&&p| p >= self.trace_len) {
            return Err(Error::FeatureIndex { index: p, len: self.trace_len });
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config("noise_sigma must be finite and non-negative"));
        }
        if !self.amplitude.is_finite() || !self.baseline.is_finite() {
            return Err(Error::Config("amplitude and baseline must be finite"));
        }
        Ok(())
    }
}

/// Generates `n` traces. Samples are rounded to `f32` so the set round-trips
/// exactly through an `f32` container. Identical seeds give identical sets.
pub fn simulate(cfg: &SimConfig, n: usize) -> Result<TraceSet> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|_| Error::Config("noise_sigma"))?;
    let b = cfg.byte_index.get();
    let mut leak_mask = vec![false; cfg.trace_len];
    for &p in cfg.leak_points.as_slice() {
        leak_mask[p] = true;
    }

    let mut plaintexts = Vec::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * cfg.trace_len);
    for _ in 0..n {
        let pt: [u8; 16] = rng.random();
        let key = match cfg.key_mode {
            KeyMode::Fixed(k) => k,
            KeyMode::Variable => rng.random(),
        };
        let label = sbox_label(pt[b], key[b]);
        let signal = cfg.amplitude * cfg.leak_model.leak(label);
        for &leaks in &leak_mask {
            let mut x = cfg.baseline + noise.sample(&mut rng);
            if leaks {
                x += signal;
            }
            data.push(f64::from(x as f32));
        }
        plaintexts.push(pt);
        keys.push(key);
        labels.push(label);
    }
    TraceSet::new(
        Matrix::from_vec(n, cfg.trace_len, data)?,
        plaintexts,
        Some(keys),
        Some(labels),
        cfg.byte_index,
        SampleType::F32,
    )
}

/// Reported in place of `+inf` when the within-class variance is zero.
pub const SNR_CAP: f64 = 1e12;

/// Per-sample SNR: variance across classes of the class means divided by the
/// mean within-class variance. Classes with fewer than two traces are left
/// out.
pub fn estimate_snr(set: &TraceSet) -> Result<Vec<f64>> {
    let labels = set.labels().ok_or(Error::MissingLabels)?;
    let l = set.trace_len();
    let mut count = [0usize; 256];
    let mut sum = vec![0.0; 256 * l];
    for (row, &y) in set.samples().iter_rows().zip(labels) {
        count[y as usize] += 1;
        for (s, &x) in sum[y as usize * l..][..l].iter_mut().zip(row) {
            *s += x;
        }
    }
    let classes: Vec<usize> = (0..256).filter(|&c| count[c] >= 2).collect();
    if classes.is_empty() {
        return Err(Error::TooFewSamples { needed: 2, got: set.n_traces() });
    }
    let mut means = sum;
    for &c in &classes {
        means[c * l..][..l].iter_mut().for_each(|m| *m /= count[c] as f64);
    }
    let mut within = vec![0.0; 256 * l];
    for (row, &y) in set.samples().iter_rows().zip(labels) {
        let c = y as usize;
        if count[c] < 2 {
            continue;
        }
        for ((w, &m), &x) in within[c * l..][..l].iter_mut().zip(&means[c * l..][..l]).zip(row) {
            *w += (x - m) * (x - m);
        }
    }
    let k = classes.len() as f64;
    let snr = (0..l)
        .map(|j| {
            let grand = classes.iter().map(|&c| means[c * l + j]).sum::<f64>() / k;
            let signal = classes
                .iter()
                .map(|&c| (means[c * l + j] - grand) * (means[c * l + j] - grand))
                .sum::<f64>()
                / k;
            let noise = classes
                .iter()
                .map(|&c| within[c * l + j] / (count[c] - 1) as f64)
                .sum::<f64>()
                / k;
            if noise > 0.0 {
                (signal / noise).min(SNR_CAP)
            } else if signal > 0.0 {
                SNR_CAP
            } else {
                0.0
            }
        })
        .collect();
    Ok(snr)
}
