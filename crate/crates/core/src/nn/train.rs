use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Param;
use super::model::NetModel;
use super::NetConfig;
use crate::classifier::{LogProbMatrix, ProbClassifier};
use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::matrix::Matrix;
use crate::traces::TraceSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub decay_rate: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self { lr: 1e-5, weight_decay: 1e-5, decay_rate: 0.99, eps: 1e-8 }
    }
}

/// RMSprop with decoupled weight decay:
/// `s ← ρ·s + (1-ρ)·g²`, `w ← w - lr·g / (√s + eps) - lr·wd·w`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    square_avg: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig) -> Self {
        Self { config, square_avg: Vec::new() }
    }

    pub fn step(&mut self, params: Vec<&mut Param>) {
        if self.square_avg.len() != params.len() {
            self.square_avg = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
        let RmsPropConfig { lr, weight_decay, decay_rate, eps } = self.config;
        for (p, s) in params.into_iter().zip(&mut self.square_avg) {
            for ((w, &g), s) in p.value.iter_mut().zip(&p.grad).zip(s.iter_mut()) {
                *s = decay_rate * *s + (1.0 - decay_rate) * g * g;
                *w -= lr * g / (sqrt(*s) + eps) + lr * weight_decay * *w;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub optimizer: RmsPropConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Share of the data held out for validation loss, `[0, 1)`.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { optimizer: RmsPropConfig::default(), batch_size: 100, epochs: 150, seed: 0, validation_fraction: 0.1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-epoch mean training loss and, when a validation split exists, the
/// evaluation-mode validation loss.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

/// Trains on a labeled trace set.
pub fn train(model: &mut NetModel, data: &TraceSet, cfg: &TrainConfig) -> Result<TrainHistory> {
    let labels = data.labels().ok_or(Error::MissingLabels)?;
    train_samples(model, data.samples(), labels, cfg)
}

pub fn train_samples(model: &mut NetModel, samples: &Matrix, labels: &[u8], cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let n = samples.rows();
    if n == 0 {
        return Err(Error::Empty);
    }
    if labels.len() != n {
        return Err(Error::Dimension { expected: n, got: labels.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64) * cfg.validation_fraction) as usize;
    let n_val = if n_val >= n { 0 } else { n_val };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val = (!val_idx.is_empty()).then(|| {
        let y: Vec<u8> = val_idx.iter().map(|&i| labels[i]).collect();
        (samples.select_rows(val_idx), y)
    });

    let mut opt = RmsProp::new(cfg.optimizer);
    let mut history = TrainHistory::default();
    for _ in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        // the last short batch is kept
        for chunk in train_idx.chunks(cfg.batch_size) {
            let x = samples.select_rows(chunk);
            let y: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            total += model.loss_and_grad(&x, &y, &mut rng)? * chunk.len() as f64;
            opt.step(model.params_mut());
        }
        history.train_loss.push(total / train_idx.len() as f64);
        if let Some((x, y)) = &val {
            history.validation_loss.push(model.loss(x, y)?);
        }
    }
    Ok(history)
}

/// A network plus its training recipe, usable wherever a
/// [`ProbClassifier`] is expected.
#[derive(Debug, Clone, PartialEq)]
pub struct NetClassifier {
    pub model: NetModel,
    pub train_config: TrainConfig,
    pub history: TrainHistory,
}

impl NetClassifier {
    pub fn new(config: NetConfig, train_config: TrainConfig) -> Result<Self> {
        Ok(Self { model: NetModel::new(config, train_config.seed)?, train_config, history: TrainHistory::default() })
    }
}

impl ProbClassifier for NetClassifier {
    fn fit(&mut self, samples: &Matrix, labels: &[u8]) -> Result<()> {
        self.history = train_samples(&mut self.model, samples, labels, &self.train_config)?;
        Ok(())
    }

    fn predict_log_proba(&self, samples: &Matrix) -> Result<LogProbMatrix> {
        self.model.predict_log_proba(samples)
    }
}
