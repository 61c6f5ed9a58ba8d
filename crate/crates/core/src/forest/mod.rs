//! CART random forest with Gini impurity, averaged leaf probabilities and
//! mean-decrease-in-impurity feature importance.

mod tree;

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use tree::{Tree, TreeNode};
use tree::{TreeBuilder, TreeParams};

use crate::classifier::{LogProbMatrix, ProbClassifier, N_CLASSES};
use crate::error::{Error, Result};
use crate::math::{floor, sqrt};
use crate::matrix::Matrix;
use crate::traces::FeatureIndexList;

/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Number of features drawn as split candidates at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxFeatures {
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => floor(sqrt(n_features as f64)) as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Fixed(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 20, min_samples_leaf: 10, max_features: MaxFeatures::Sqrt, seed: 0 }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::Config("n_trees, max_depth and min_samples_leaf must be >= 1"));
        }
        if self.max_features == MaxFeatures::Fixed(0) {
            return Err(Error::Config("max_features must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    config: ForestConfig,
    n_features: usize,
    trees: Vec<Tree>,
}

impl ForestModel {
    /// An unfitted forest carrying only its configuration.
    pub fn new(config: ForestConfig) -> Self {
        Self { config, n_features: 0, trees: Vec::new() }
    }

    pub fn fit(samples: &Matrix, labels: &[u8], config: ForestConfig) -> Result<Self> {
        config.validate()?;
        let n = samples.rows();
        if n == 0 || samples.cols() == 0 {
            return Err(Error::Empty);
        }
        if labels.len() != n {
            return Err(Error::Dimension { expected: n, got: labels.len() });
        }
        if n < config.min_samples_leaf {
            return Err(Error::TooFewSamples { needed: config.min_samples_leaf, got: n });
        }
        let params_for = |t: usize| TreeParams {
            max_depth: config.max_depth,
            min_samples_leaf: config.min_samples_leaf,
            n_candidates: config.max_features.resolve(samples.cols()),
            seed: config.seed ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        };
        let trees = (0..config.n_trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(t as u64);
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let params = params_for(t);
                TreeBuilder::new(samples, labels, &params).build(rows)
            })
            .collect();
        Ok(Self { config, n_features: samples.cols(), trees })
    }

    /// Reassembles a fitted forest, e.g. from a checkpoint.
    pub fn from_parts(config: ForestConfig, n_features: usize, trees: Vec<Tree>) -> Result<Self> {
        config.validate()?;
        if trees.len() != config.n_trees {
            return Err(Error::Dimension { expected: config.n_trees, got: trees.len() });
        }
        if let Some(t) = trees.iter().find(|t| t.importance().len() != n_features) {
            return Err(Error::Dimension { expected: n_features, got: t.importance().len() });
        }
        Ok(Self { config, n_features, trees })
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Mean of the reached leaves' distributions, before clamping.
    pub fn predict_proba(&self, samples: &Matrix) -> Result<Matrix> {
        if self.trees.is_empty() || samples.cols() != self.n_features {
            return Err(Error::Dimension { expected: self.n_features, got: samples.cols() });
        }
        let mut out = Matrix::zeros(samples.rows(), N_CLASSES);
        let scale = 1.0 / self.trees.len() as f64;
        for (i, x) in samples.iter_rows().enumerate() {
            let acc = out.row_mut(i);
            for tree in &self.trees {
                if let TreeNode::Leaf { class_dist, .. } = tree.leaf_for(x) {
                    for &(c, p) in class_dist {
                        acc[c as usize] += p;
                    }
                }
            }
            acc.iter_mut().for_each(|p| *p *= scale);
        }
        Ok(out)
    }

    pub fn predict_log_proba(&self, samples: &Matrix) -> Result<LogProbMatrix> {
        LogProbMatrix::from_probabilities(self.predict_proba(samples)?, PROB_FLOOR)
    }
}

impl ProbClassifier for ForestModel {
    fn fit(&mut self, samples: &Matrix, labels: &[u8]) -> Result<()> {
        *self = ForestModel::fit(samples, labels, self.config)?;
        Ok(())
    }

    fn predict_log_proba(&self, samples: &Matrix) -> Result<LogProbMatrix> {
        ForestModel::predict_log_proba(self, samples)
    }
}

/// Normalized feature importances and the importance-descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRanking {
    pub importances: Vec<f64>,
    pub order: Vec<usize>,
}

/// Mean decrease in impurity, normalized per tree, averaged over trees
/// with at least one split and renormalized.
pub fn gini_importance(model: &ForestModel) -> FeatureRanking {
    let l = model.n_features();
    let mut total = vec![0.0; l];
    for tree in model.trees() {
        let s: f64 = tree.importance().iter().sum();
        if s > 0.0 {
            for (t, &v) in total.iter_mut().zip(tree.importance()) {
                *t += v / s;
            }
        }
    }
    let s: f64 = total.iter().sum();
    if s > 0.0 {
        total.iter_mut().for_each(|v| *v /= s);
    }
    let mut order: Vec<usize> = (0..l).collect();
    // stable: equal importances keep ascending index order
    order.sort_by(|&a, &b| total[b].total_cmp(&total[a]));
    FeatureRanking { importances: total, order }
}

/// First `k` features of the ranking.
pub fn top_k(ranking: &FeatureRanking, k: usize) -> Result<FeatureIndexList> {
    let l = ranking.order.len();
    if k == 0 || k > l {
        return Err(Error::TopK { k, len: l });
    }
    FeatureIndexList::new(ranking.order[..k].to_vec(), l)
}
