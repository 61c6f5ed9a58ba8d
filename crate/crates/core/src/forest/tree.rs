use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::N_CLASSES;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A node of a fitted tree. Children are indices into the owning tree's
/// node list; samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Class distribution stored sparsely as `(class, probability)` pairs,
    /// ascending by class. Absent classes have probability 0.
    Leaf { class_dist: Vec<(u8, f64)>, n_samples: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    /// Unnormalized impurity decrease credited to each feature.
    importance: Vec<f64>,
}

impl Tree {
    /// Rebuilds a tree from its node list (root at index 0). Checks child
    /// links and leaf normalization.
    pub fn from_parts(nodes: Vec<TreeNode>, importance: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty);
        }
        for (i, node) in nodes.iter().enumerate() {
            match node {
                TreeNode::Split { feature, left, right, .. } => {
                    if *left <= i || *right <= i || *left >= nodes.len() || *right >= nodes.len() {
                        return Err(Error::Config("tree child index out of order"));
                    }
                    if *feature >= importance.len() {
                        return Err(Error::FeatureIndex { index: *feature, len: importance.len() });
                    }
                }
                TreeNode::Leaf { class_dist, .. } => {
                    let total: f64 = class_dist.iter().map(|&(_, p)| p).sum();
                    if (total - 1.0).abs() > 1e-9 {
                        return Err(Error::Config("leaf distribution does not sum to 1"));
                    }
                }
            }
        }
        Ok(Self { nodes, importance })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn importance(&self) -> &[f64] {
        &self.importance
    }

    pub fn leaf_for(&self, x: &[f64]) -> &TreeNode {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                leaf => return leaf,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
                TreeNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub n_candidates: usize,
    pub seed: u64,
}

/// Class histogram of a node with its sum of squared counts.
#[derive(Clone)]
struct Histogram {
    counts: [u32; N_CLASSES],
    n: usize,
    sum_sq: u64,
}

impl Histogram {
    fn empty() -> Self {
        Self { counts: [0; N_CLASSES], n: 0, sum_sq: 0 }
    }

    #[inline]
    fn add(&mut self, y: u8) {
        let c = &mut self.counts[y as usize];
        self.sum_sq += 2 * u64::from(*c) + 1;
        *c += 1;
        self.n += 1;
    }

    #[inline]
    fn remove(&mut self, y: u8) {
        let c = &mut self.counts[y as usize];
        self.sum_sq -= 2 * u64::from(*c) - 1;
        *c -= 1;
        self.n -= 1;
    }

    fn gini(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        1.0 - self.sum_sq as f64 / (n * n)
    }

    fn is_pure(&self) -> bool {
        self.sum_sq == (self.n as u64) * (self.n as u64)
    }

    fn distribution(&self) -> Vec<(u8, f64)> {
        let n = self.n as f64;
        (0..N_CLASSES)
            .filter(|&c| self.counts[c] > 0)
            .map(|c| (c as u8, f64::from(self.counts[c]) / n))
            .collect()
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    /// `Σ left² / n_left + Σ right² / n_right`; larger is purer.
    score: f64,
}

pub(crate) struct TreeBuilder<'a> {
    samples: &'a Matrix,
    labels: &'a [u8],
    params: &'a TreeParams,
    n_root: usize,
    nodes: Vec<TreeNode>,
    importance: Vec<f64>,
    buf: Vec<(f64, u8)>,
}

/// Per-node feature draws come from `(tree seed, heap position)`, so a
/// subtree's randomness does not depend on how its siblings grew.
fn node_rng(seed: u64, heap_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(heap_id);
    rng
}

impl<'a> TreeBuilder<'a> {
    pub fn new(samples: &'a Matrix, labels: &'a [u8], params: &'a TreeParams) -> Self {
        Self {
            samples,
            labels,
            params,
            n_root: 0,
            nodes: Vec::new(),
            importance: vec![0.0; samples.cols()],
            buf: Vec::new(),
        }
    }

    /// Grows a tree on the given (bootstrap) row indices.
    pub fn build(mut self, mut rows: Vec<usize>) -> Tree {
        self.n_root = rows.len();
        self.grow(&mut rows, 0, 1);
        Tree { nodes: self.nodes, importance: self.importance }
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize, heap_id: u64) -> usize {
        let mut hist = Histogram::empty();
        for &r in rows.iter() {
            hist.add(self.labels[r]);
        }
        let id = self.nodes.len();
        let min_leaf = self.params.min_samples_leaf;
        let stop = depth >= self.params.max_depth || hist.is_pure() || rows.len() < 2 * min_leaf;
        let split = if stop { None } else { self.best_split(rows, &hist, heap_id) };
        let Some(split) = split else {
            self.nodes.push(TreeNode::Leaf { class_dist: hist.distribution(), n_samples: hist.n });
            return id;
        };

        // placeholder, patched once children exist
        self.nodes.push(TreeNode::Leaf { class_dist: Vec::new(), n_samples: 0 });
        let x = self.samples;
        let mut lo = 0;
        for i in 0..rows.len() {
            if x.get(rows[i], split.feature) <= split.threshold {
                rows.swap(lo, i);
                lo += 1;
            }
        }
        let (left_rows, right_rows) = rows.split_at_mut(lo);
        let n = hist.n as f64;
        let child_gini = (n - split.score) / n;
        self.importance[split.feature] += n / self.n_root as f64 * (hist.gini() - child_gini);

        let left = self.grow(left_rows, depth + 1, heap_id.wrapping_mul(2));
        let right = self.grow(right_rows, depth + 1, heap_id.wrapping_mul(2).wrapping_add(1));
        self.nodes[id] =
            TreeNode::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }

    fn best_split(&mut self, rows: &[usize], hist: &Histogram, heap_id: u64) -> Option<Split> {
        let l = self.samples.cols();
        let mut rng = node_rng(self.params.seed, heap_id);
        let mut features = index::sample(&mut rng, l, self.params.n_candidates.min(l)).into_vec();
        features.sort_unstable();

        let n = rows.len();
        let min_leaf = self.params.min_samples_leaf;
        let parent_score = hist.sum_sq as f64 / n as f64;
        let mut best: Option<Split> = None;
        for f in features {
            self.buf.clear();
            self.buf.extend(rows.iter().map(|&r| (self.samples.get(r, f), self.labels[r])));
            self.buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if self.buf[0].0 == self.buf[n - 1].0 {
                continue;
            }
            let mut left = Histogram::empty();
            let mut right = hist.clone();
            for i in 0..n - 1 {
                let (xi, yi) = self.buf[i];
                left.add(yi);
                right.remove(yi);
                let next = self.buf[i + 1].0;
                if left.n < min_leaf || right.n < min_leaf || xi == next {
                    continue;
                }
                let score =
                    left.sum_sq as f64 / left.n as f64 + right.sum_sq as f64 / right.n as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mut threshold = xi + (next - xi) / 2.0;
                    if threshold >= next {
                        threshold = xi;
                    }
                    best = Some(Split { feature: f, threshold, score });
                }
            }
        }
        // must strictly reduce weighted impurity
        best.filter(|b| b.score > parent_score * (1.0 + 1e-12))
    }
}
