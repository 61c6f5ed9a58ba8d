//! In-memory trace datasets and the preprocessing applied to them.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aes::{sbox_label, ByteIndex};
use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::matrix::Matrix;

/// Sample type the traces were stored with before widening to `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleType {
    F32,
    I8,
    I16,
}

impl SampleType {
    pub fn size(self) -> usize {
        match self {
            SampleType::F32 => 4,
            SampleType::I8 => 1,
            SampleType::I16 => 2,
        }
    }
}

/// `N` traces of `L` samples with per-trace plaintext, optional key and
/// optional label metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    samples: Matrix,
    plaintexts: Vec<[u8; 16]>,
    keys: Option<Vec<[u8; 16]>>,
    labels: Option<Vec<u8>>,
    byte_index: ByteIndex,
    source_dtype: SampleType,
}

impl TraceSet {
    /// Builds a set and checks every invariant, including the label
    /// invariant when both keys and labels are present.
    pub fn new(
        samples: Matrix,
        plaintexts: Vec<[u8; 16]>,
        keys: Option<Vec<[u8; 16]>>,
        labels: Option<Vec<u8>>,
        byte_index: ByteIndex,
        source_dtype: SampleType,
    ) -> Result<Self> {
        let n = samples.rows();
        if n == 0 || samples.cols() == 0 {
            return Err(Error::Empty);
        }
        if plaintexts.len() != n {
            return Err(Error::Dimension { expected: n, got: plaintexts.len() });
        }
        if let Some(k) = &keys {
            if k.len() != n {
                return Err(Error::Dimension { expected: n, got: k.len() });
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Dimension { expected: n, got: l.len() });
            }
        }
        if let (Some(k), Some(l)) = (&keys, &labels) {
            let b = byte_index.get();
            for i in 0..n {
                if l[i] != sbox_label(plaintexts[i][b], k[i][b]) {
                    return Err(Error::LabelMismatch(i));
                }
            }
        }
        Ok(Self { samples, plaintexts, keys, labels, byte_index, source_dtype })
    }

    pub fn n_traces(&self) -> usize {
        self.samples.rows()
    }

    pub fn trace_len(&self) -> usize {
        self.samples.cols()
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn plaintexts(&self) -> &[[u8; 16]] {
        &self.plaintexts
    }

    pub fn keys(&self) -> Option<&[[u8; 16]]> {
        self.keys.as_deref()
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn byte_index(&self) -> ByteIndex {
        self.byte_index
    }

    pub fn source_dtype(&self) -> SampleType {
        self.source_dtype
    }

    /// Plaintext bytes at the targeted index.
    pub fn target_plaintexts(&self) -> Vec<u8> {
        let b = self.byte_index.get();
        self.plaintexts.iter().map(|p| p[b]).collect()
    }

    /// Key byte at the targeted index of the first trace, if keys are present.
    pub fn target_key(&self) -> Option<u8> {
        self.keys.as_ref().map(|k| k[0][self.byte_index.get()])
    }

    /// Same metadata, different samples. Row count must match.
    pub fn with_samples(&self, samples: Matrix) -> Result<Self> {
        if samples.rows() != self.n_traces() {
            return Err(Error::Dimension { expected: self.n_traces(), got: samples.rows() });
        }
        if samples.cols() == 0 {
            return Err(Error::Empty);
        }
        Ok(Self { samples, ..self.clone() })
    }

    /// Subset of traces, in the given order.
    pub fn select_traces(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Empty);
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n_traces()) {
            return Err(Error::Dimension { expected: self.n_traces(), got: bad });
        }
        Ok(Self {
            samples: self.samples.select_rows(idx),
            plaintexts: idx.iter().map(|&i| self.plaintexts[i]).collect(),
            keys: self.keys.as_ref().map(|k| idx.iter().map(|&i| k[i]).collect()),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            byte_index: self.byte_index,
            source_dtype: self.source_dtype,
        })
    }

    /// First `n` traces (or all of them if fewer).
    pub fn head(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.n_traces())).collect();
        self.select_traces(&idx)
    }
}

/// Ordered list of distinct column indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureIndexList(Vec<usize>);

impl FeatureIndexList {
    pub fn new(indices: Vec<usize>, trace_len: usize) -> Result<Self> {
        let mut seen = vec![false; trace_len];
        for &i in &indices {
            if i >= trace_len {
                return Err(Error::FeatureIndex { index: i, len: trace_len });
            }
            if seen[i] {
                return Err(Error::DuplicateFeature(i));
            }
            seen[i] = true;
        }
        Ok(Self(indices))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

/// Restricts samples to the listed columns, in list order.
pub fn select_features(set: &TraceSet, idx: &FeatureIndexList) -> Result<TraceSet> {
    if let Some(&bad) = idx.as_slice().iter().find(|&&i| i >= set.trace_len()) {
        return Err(Error::FeatureIndex { index: bad, len: set.trace_len() });
    }
    set.with_samples(set.samples.select_cols(idx.as_slice()))
}

/// Per-column standardization fitted on profiling data.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// Standard deviations below this are treated as constant columns.
pub const STD_GUARD: f64 = 1e-12;

impl Scaler {
    /// Restores a scaler from stored statistics.
    pub fn from_parts(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Dimension { expected: mean.len(), got: std.len() });
        }
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("scaler std must be strictly positive"));
        }
        Ok(Self { mean, std })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn fit(samples: &Matrix) -> Result<Self> {
        let n = samples.rows();
        if n == 0 {
            return Err(Error::Empty);
        }
        let l = samples.cols();
        let mut mean = vec![0.0; l];
        for r in samples.iter_rows() {
            for (m, &x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; l];
        for r in samples.iter_rows() {
            for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(r) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = sqrt(v / n as f64);
                if s < STD_GUARD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, samples: &Matrix) -> Result<Matrix> {
        if samples.cols() != self.len() {
            return Err(Error::Dimension { expected: self.len(), got: samples.cols() });
        }
        let mut out = samples.clone();
        for i in 0..out.rows() {
            for ((x, &m), &s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        Ok(out)
    }
}

/// Fits a scaler on the profiling set only. Population standard deviation.
pub fn fit_scaler(profiling: &TraceSet) -> Result<Scaler> {
    Scaler::fit(profiling.samples())
}

pub fn apply_scaler(scaler: &Scaler, set: &TraceSet) -> Result<TraceSet> {
    set.with_samples(scaler.transform(set.samples())?)
}

/// One `(train, validation)` index pair.
pub type Fold = (Vec<usize>, Vec<usize>);

/// Seeded k-fold split. Validation folds partition `0..n` and differ in size
/// by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || k > n {
        return Err(Error::FoldCount { k, n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let val = perm[start..start + size].to_vec();
        let train = perm[..start].iter().chain(&perm[start + size..]).copied().collect();
        folds.push((train, val));
        start += size;
    }
    Ok(folds)
}
