//! Key-byte evidence from per-trace class probabilities.
//!
//! For every key hypothesis `k`, the score is the summed log-probability
//! `Σ_i ln(P(Sbox(pt_i ⊕ k) | trace_i) + ε)`. The rank of the true key is the
//! number of other hypotheses scoring at least as high (ties count against
//! the attacker), so rank 0 means recovered.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aes::sbox_label;
use crate::classifier::{LogProbMatrix, N_CLASSES};
use crate::error::{Error, Result};
use crate::math::{log, log_add_exp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyRankConfig {
    pub epsilon: f64,
}

impl Default for KeyRankConfig {
    fn default() -> Self {
        Self { epsilon: 1e-40 }
    }
}

impl KeyRankConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Config("epsilon must be positive"));
        }
        Ok(Self { epsilon })
    }
}

/// One score per key hypothesis, indexed by the hypothesis byte.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable(pub [f64; N_CLASSES]);

impl ScoreTable {
    pub fn get(&self, key: u8) -> f64 {
        self.0[key as usize]
    }

    pub fn best_key(&self) -> u8 {
        crate::math::argmax(&self.0) as u8
    }
}

/// `(n_traces, rank)` points with strictly increasing trace counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RankCurve {
    pub points: Vec<(usize, u8)>,
}

impl RankCurve {
    pub fn final_rank(&self) -> Option<u8> {
        self.points.last().map(|&(_, r)| r)
    }
}

/// Default spacing between rank-curve points.
pub const DEFAULT_STEP: usize = 10;

/// Running per-hypothesis score sums.
struct Accumulator {
    scores: [f64; N_CLASSES],
    log_eps: f64,
}

impl Accumulator {
    fn new(cfg: &KeyRankConfig) -> Self {
        Self { scores: [0.0; N_CLASSES], log_eps: log(cfg.epsilon) }
    }

    #[inline]
    fn add(&mut self, row: &[f64], pt: u8) {
        for (k, s) in self.scores.iter_mut().enumerate() {
            // ln(exp(lp) + eps) without materializing exp(lp)
            *s += log_add_exp(row[sbox_label(pt, k as u8) as usize], self.log_eps);
        }
    }
}

fn check_lengths(probs: &LogProbMatrix, pts: &[u8]) -> Result<()> {
    if probs.rows() == 0 {
        return Err(Error::Empty);
    }
    if probs.rows() != pts.len() {
        return Err(Error::Dimension { expected: probs.rows(), got: pts.len() });
    }
    Ok(())
}

/// Scores all 256 key hypotheses. `pts` holds the targeted plaintext byte
/// of each trace.
pub fn score_keys(probs: &LogProbMatrix, pts: &[u8], cfg: &KeyRankConfig) -> Result<ScoreTable> {
    check_lengths(probs, pts)?;
    let mut acc = Accumulator::new(cfg);
    for (i, &pt) in pts.iter().enumerate() {
        acc.add(probs.row(i), pt);
    }
    Ok(ScoreTable(acc.scores))
}

/// Pessimistic rank: hypotheses other than `k_true` scoring `>=` it.
pub fn true_key_rank(scores: &ScoreTable, k_true: u8) -> u8 {
    let target = scores.get(k_true);
    scores
        .0
        .iter()
        .enumerate()
        .filter(|&(k, &s)| k != k_true as usize && s >= target)
        .count() as u8
}

/// Rank of `k_true` after `step`, `2·step`, … traces, always ending at `N`.
pub fn rank_curve(
    probs: &LogProbMatrix,
    pts: &[u8],
    k_true: u8,
    step: usize,
    cfg: &KeyRankConfig,
) -> Result<RankCurve> {
    check_lengths(probs, pts)?;
    if step == 0 {
        return Err(Error::Config("step must be at least 1"));
    }
    let n = pts.len();
    let mut acc = Accumulator::new(cfg);
    let mut points = Vec::with_capacity(n / step + 1);
    for (i, &pt) in pts.iter().enumerate() {
        acc.add(probs.row(i), pt);
        let seen = i + 1;
        if seen % step == 0 || seen == n {
            points.push((seen, true_key_rank(&ScoreTable(acc.scores), k_true)));
        }
    }
    Ok(RankCurve { points })
}

/// Smallest trace count from which the rank stays 0 for the rest of the
/// curve.
pub fn traces_to_rank0(curve: &RankCurve) -> Option<usize> {
    let mut first = None;
    for &(n, r) in curve.points.iter().rev() {
        if r != 0 {
            break;
        }
        first = Some(n);
    }
    first
}

/// Mean rank over `n_perm` random trace orderings (guessing entropy).
pub fn average_rank_curve(
    probs: &LogProbMatrix,
    pts: &[u8],
    k_true: u8,
    step: usize,
    cfg: &KeyRankConfig,
    n_perm: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    check_lengths(probs, pts)?;
    if n_perm == 0 {
        return Err(Error::Config("n_perm must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pts.len()).collect();
    let mut sums: Vec<(usize, f64)> = Vec::new();
    for _ in 0..n_perm {
        order.shuffle(&mut rng);
        let p = probs.select_rows(&order);
        let q: Vec<u8> = order.iter().map(|&i| pts[i]).collect();
        let curve = rank_curve(&p, &q, k_true, step, cfg)?;
        if sums.is_empty() {
            sums = curve.points.iter().map(|&(n, _)| (n, 0.0)).collect();
        }
        for (s, &(_, r)) in sums.iter_mut().zip(&curve.points) {
            s.1 += f64::from(r);
        }
    }
    Ok(sums.into_iter().map(|(n, s)| (n, s / n_perm as f64)).collect())
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(probs: &LogProbMatrix, labels: &[u8]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::Dimension { expected: probs.rows(), got: labels.len() });
    }
    if labels.is_empty() {
        return Err(Error::Empty);
    }
    let hits = probs.argmax().iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}
