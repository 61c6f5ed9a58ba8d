use alloc::vec;
use alloc::vec::Vec;

/// Activations laid out `(batch, channels, len)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub batch: usize,
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(batch: usize, channels: usize, len: usize) -> Self {
        Self { batch, channels, len, data: vec![0.0; batch * channels * len] }
    }

    pub fn from_vec(batch: usize, channels: usize, len: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), batch * channels * len);
        Self { batch, channels, len, data }
    }

    #[inline]
    pub fn idx(&self, b: usize, c: usize, t: usize) -> usize {
        (b * self.channels + c) * self.len + t
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, t: usize) -> f64 {
        self.data[self.idx(b, c, t)]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.batch == other.batch && self.channels == other.channels && self.len == other.len
    }

    /// Row width when viewed as `batch × (channels·len)`.
    pub fn features(&self) -> usize {
        self.channels * self.len
    }
}
