//! Loss and score values for the pairwise decoder stages.
//!
//! Everything here is a pure function of caller-supplied log-probabilities,
//! logits or embeddings. No gradients are computed.

use std::collections::BTreeSet;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{log_softmax, log_sum_exp, Matrix};
use crate::rng;
use crate::seqcore::TokenSequence;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Hyperparameters for the scoring and loss functions in this module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub lambda_nce: f64,
    pub lambda_ent: f64,
    /// Temperature applied to likelihood scores inside the NCE softmax.
    pub nce_temperature: f64,
    /// Hard negatives per row; `None` means `min(4, B - 1)`.
    pub hard_negatives: Option<usize>,
    pub ema_alpha: f64,
    pub mtf_alpha: f64,
    /// Length-cap ratio of decoded tokens to conditioning frames.
    pub rho: f64,
    /// Encoder learning rate as a fraction of the decoder's.
    pub lr_ratio: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda_nce: 1.0,
            lambda_ent: 0.01,
            nce_temperature: 1.0,
            hard_negatives: None,
            ema_alpha: 0.999,
            mtf_alpha: 0.5,
            rho: 0.15,
            lr_ratio: 0.1,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.lambda_nce,
            self.lambda_ent,
            self.nce_temperature,
            self.ema_alpha,
            self.mtf_alpha,
            self.rho,
            self.lr_ratio,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("objective hyperparameters must be finite".into()));
        }
        if self.lambda_nce < 0.0 || self.lambda_ent < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if self.nce_temperature <= 0.0 {
            return Err(Error::Config("NCE temperature must be > 0".into()));
        }
        if self.hard_negatives == Some(0) {
            return Err(Error::Config("hard_negatives must be >= 1".into()));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha < 1.0) {
            return Err(Error::Config("ema_alpha must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.mtf_alpha) {
            return Err(Error::Config("mtf_alpha must lie in [0, 1]".into()));
        }
        if self.rho <= 0.0 || self.lr_ratio <= 0.0 {
            return Err(Error::Config("rho and lr_ratio must be > 0".into()));
        }
        Ok(())
    }

    /// Hard-negative count for a batch of `batch` pairs.
    pub fn hard_negatives_for(&self, batch: usize) -> usize {
        self.hard_negatives
            .unwrap_or_else(|| 4.min(batch.saturating_sub(1)))
    }
}

/// 1-based target positions whose teacher-forcing prefix slot is masked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSet {
    pub positions: BTreeSet<usize>,
    pub rng_seed: u64,
}

impl MaskSet {
    pub fn empty() -> Self {
        MaskSet {
            positions: BTreeSet::new(),
            rng_seed: 0,
        }
    }

    pub fn from_positions(positions: impl IntoIterator<Item = usize>) -> Self {
        MaskSet {
            positions: positions.into_iter().collect(),
            rng_seed: 0,
        }
    }

    pub fn contains(&self, m: usize) -> bool {
        self.positions.contains(&m)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        Ok(ParameterVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Affine map from the encoder width `d` into the decoder width `d_dec`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryProjection {
    weight: Matrix,
    bias: Vec<f64>,
}

impl SummaryProjection {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::Dimension(format!(
                "weight has {} rows, bias has {} entries",
                weight.rows(),
                bias.len()
            )));
        }
        if bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("projection bias".into()));
        }
        Ok(SummaryProjection { weight, bias })
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn length_normalized_ll(logprobs: &[f64]) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::Empty("no target positions".into()));
    }
    Ok(mean(logprobs))
}

/// Positions `m` (1-based over `target`) that may be masked: the prefix slot
/// `m - 1` must hold a non-special token, so `m = 1` (prefix BOS) never is.
pub fn eligible_mask_positions(target: &TokenSequence) -> Vec<usize> {
    let alphabet = target.alphabet();
    let tokens = target.tokens();
    (2..=tokens.len())
        .filter(|&m| {
            let prev = tokens[m - 2];
            prev != alphabet.bos && prev != alphabet.eos && prev != alphabet.pad
        })
        .collect()
}

/// Draws one uniform per eligible position, in order, and keeps the
/// position when the draw falls below `p_mask`.
pub fn sample_mask_set(target: &TokenSequence, p_mask: f64, seed: u64) -> Result<MaskSet> {
    if !(0.0..=1.0).contains(&p_mask) {
        return Err(Error::InvalidArgument(format!("mask probability {p_mask} outside [0, 1]")));
    }
    let mut rng = rng::seeded(seed);
    let positions = eligible_mask_positions(target)
        .into_iter()
        .filter(|_| rng.gen::<f64>() < p_mask)
        .collect();
    Ok(MaskSet {
        positions,
        rng_seed: seed,
    })
}

/// Teacher-forcing input `[BOS, y_1, ..., y_{M-1}]` with slot `m - 1`
/// replaced by MASK for every `m` in the mask set whose slot is not special.
pub fn corrupt_prefix(target: &TokenSequence, mask: &MaskSet) -> Result<TokenSequence> {
    let alphabet = *target.alphabet();
    let tokens = target.tokens();
    if let Some(&bad) = mask.positions.iter().find(|&&m| m == 0 || m > tokens.len()) {
        return Err(Error::InvalidArgument(format!(
            "mask position {bad} outside 1..={}",
            tokens.len()
        )));
    }
    let mut prefix = Vec::with_capacity(tokens.len());
    if !tokens.is_empty() {
        prefix.push(alphabet.bos);
        prefix.extend_from_slice(&tokens[..tokens.len() - 1]);
    }
    for &m in &mask.positions {
        let slot = m - 1;
        if alphabet.is_content(prefix[slot]) {
            prefix[slot] = alphabet.mask;
        }
    }
    TokenSequence::new(prefix, alphabet)
}

/// Masked mean over valid frames, LayerNorm without affine parameters, then
/// the projection's affine map.
pub fn encoder_summary(z: &Matrix, valid: &[bool], proj: &SummaryProjection) -> Result<Vec<f64>> {
    if valid.len() != z.rows() {
        return Err(Error::Dimension(format!(
            "mask has {} entries for {} frames",
            valid.len(),
            z.rows()
        )));
    }
    if proj.weight.cols() != z.cols() {
        return Err(Error::Dimension(format!(
            "projection expects width {}, frames have {}",
            proj.weight.cols(),
            z.cols()
        )));
    }
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::Empty("no valid encoder frames".into()));
    }
    let mut pooled = vec![0.0; z.cols()];
    for (row, _) in z.row_iter().zip(valid).filter(|(_, &v)| v) {
        for (p, x) in pooled.iter_mut().zip(row) {
            *p += x;
        }
    }
    pooled.iter_mut().for_each(|p| *p /= count as f64);

    let normed = if pooled.is_empty() {
        pooled
    } else {
        let mu = mean(&pooled);
        let var = pooled.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / pooled.len() as f64;
        let scale = (var + LAYER_NORM_EPS).sqrt();
        pooled.iter().map(|x| (x - mu) / scale).collect()
    };
    Ok(proj
        .weight
        .row_iter()
        .zip(&proj.bias)
        .map(|(w, b)| w.iter().zip(&normed).map(|(a, x)| a * x).sum::<f64>() + b)
        .collect())
}

/// Balanced masked teacher-forcing score. Position `m` of the mask set refers
/// to `logprobs[m - 1]`. When either side is empty the other side's mean is
/// returned on its own.
pub fn mtf_score(logprobs: &[f64], mask: &MaskSet, alpha: f64) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::Empty("no target positions".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if let Some(&bad) = mask.positions.iter().find(|&&m| m == 0 || m > logprobs.len()) {
        return Err(Error::InvalidArgument(format!(
            "mask position {bad} outside 1..={}",
            logprobs.len()
        )));
    }
    let (masked, unmasked): (Vec<_>, Vec<_>) = logprobs
        .iter()
        .enumerate()
        .partition(|(i, _)| mask.contains(i + 1));
    let masked: Vec<f64> = masked.into_iter().map(|(_, &v)| v).collect();
    let unmasked: Vec<f64> = unmasked.into_iter().map(|(_, &v)| v).collect();
    Ok(match (masked.is_empty(), unmasked.is_empty()) {
        (true, _) => mean(&unmasked),
        (_, true) => mean(&masked),
        _ => alpha * mean(&masked) + (1.0 - alpha) * mean(&unmasked),
    })
}

/// `sum_m w_m * logprobs[m]`, the weighted form of the score.
pub fn weighted_score(logprobs: &[f64], weights: &[f64]) -> Result<f64> {
    if logprobs.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} log-probabilities, {} weights",
            logprobs.len(),
            weights.len()
        )));
    }
    Ok(logprobs.iter().zip(weights).map(|(l, w)| l * w).sum())
}

/// Per-position weights that reproduce [`mtf_score`] through [`weighted_score`].
pub fn mtf_weights(len: usize, mask: &MaskSet, alpha: f64) -> Vec<f64> {
    let n_masked = (1..=len).filter(|&m| mask.contains(m)).count();
    let n_clean = len - n_masked;
    let (w_masked, w_clean) = match (n_masked, n_clean) {
        (0, n) => (0.0, 1.0 / n as f64),
        (n, 0) => (1.0 / n as f64, 0.0),
        (a, b) => (alpha / a as f64, (1.0 - alpha) / b as f64),
    };
    (1..=len)
        .map(|m| if mask.contains(m) { w_masked } else { w_clean })
        .collect()
}

/// Linear interpolation from `start` to `end` over `total` steps. A step
/// outside `0..=total` is clamped.
pub fn linear_schedule(step: u64, total: u64, start: f64, end: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidArgument("schedule length must be > 0".into()));
    }
    let s = if step > total {
        warn!("schedule step {step} beyond {total}, clamping");
        total
    } else {
        step
    };
    let frac = s as f64 / total as f64;
    Ok(start * (1.0 - frac) + end * frac)
}

/// Self-attention gate: 1 with probability `1 - p_sa`.
pub fn sa_gate(p_sa: f64, seed: u64) -> Result<u8> {
    Ok(sa_gates(p_sa, seed, 1)?[0])
}

/// `count` gates drawn from one seeded stream.
pub fn sa_gates(p_sa: f64, seed: u64, count: usize) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&p_sa) {
        return Err(Error::InvalidArgument(format!("gate probability {p_sa} outside [0, 1]")));
    }
    let mut rng = rng::seeded(seed);
    Ok((0..count)
        .map(|_| u8::from(rng.gen::<f64>() < 1.0 - p_sa))
        .collect())
}

/// Checks an in-batch likelihood matrix: `scores[i][j]` scores the target of
/// pair `j` conditioned on the source of pair `i`.
pub fn nce_matrix(scores: Matrix) -> Result<Matrix> {
    if scores.rows() != scores.cols() || scores.rows() == 0 {
        return Err(Error::Dimension(format!(
            "score matrix must be square and nonempty, got {:?}",
            scores.shape()
        )));
    }
    if scores.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score matrix".into()));
    }
    Ok(scores)
}

/// The `k` largest off-diagonal columns of row `i`, lower index first on ties.
pub fn hardest_k(scores: &Matrix, i: usize, k: usize) -> Result<Vec<usize>> {
    let b = scores.rows();
    if scores.cols() != b || i >= b {
        return Err(Error::Dimension(format!("row {i} of a {:?} matrix", scores.shape())));
    }
    if k == 0 || k + 1 > b {
        return Err(Error::InvalidArgument(format!("K = {k} outside 1..={}", b.saturating_sub(1))));
    }
    let row = scores.row(i);
    let mut cols: Vec<usize> = (0..b).filter(|&j| j != i).collect();
    cols.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
    cols.truncate(k);
    Ok(cols)
}

/// Hardest-K InfoNCE over one direction of the likelihood matrix.
pub fn nce_loss(scores: &Matrix, k: usize, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be > 0")));
    }
    let b = scores.rows();
    let mut total = 0.0;
    for i in 0..b {
        let negatives = hardest_k(scores, i, k)?;
        // Logits relative to the positive, so a constant added to the row
        // cancels before any rounding that depends on its magnitude.
        let pos = scores.get(i, i);
        let mut logits = vec![0.0];
        logits.extend(negatives.iter().map(|&j| (scores.get(i, j) - pos) / temperature));
        total += log_sum_exp(&logits);
    }
    Ok(total / b as f64)
}

/// Mean of `sum_v p log p` over rows: the negative mean entropy.
pub fn entropy_reg(logits: &Matrix) -> Result<f64> {
    if logits.rows() == 0 || logits.cols() == 0 {
        return Err(Error::Empty("no logit rows".into()));
    }
    let total: f64 = logits
        .row_iter()
        .map(|row| {
            log_softmax(row)
                .into_iter()
                .filter(|lp| lp.is_finite())
                .map(|lp| lp.exp() * lp)
                .sum::<f64>()
        })
        .sum();
    Ok(total / logits.rows() as f64)
}

pub fn stage2_objective(fwd_mtf: &[f64], rev_mtf: &[f64]) -> Result<f64> {
    if fwd_mtf.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    if fwd_mtf.len() != rev_mtf.len() {
        return Err(Error::Dimension("forward and reverse batch sizes differ".into()));
    }
    let sum: f64 = fwd_mtf.iter().zip(rev_mtf).map(|(f, r)| f + r).sum();
    Ok(-sum / fwd_mtf.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage3Terms {
    pub nce_forward: f64,
    pub nce_reverse: f64,
    pub entropy: f64,
}

pub fn stage3_objective(
    pos_fwd: &[f64],
    pos_rev: &[f64],
    terms: Stage3Terms,
    lambda_nce: f64,
    lambda_ent: f64,
) -> Result<f64> {
    let l_pos = stage2_objective(pos_fwd, pos_rev)?;
    Ok(l_pos + lambda_nce * (terms.nce_forward + terms.nce_reverse) + lambda_ent * terms.entropy)
}

pub fn ema_params(teacher: &ParameterVector, student: &ParameterVector, alpha: f64) -> Result<ParameterVector> {
    if teacher.len() != student.len() {
        return Err(Error::Dimension(format!(
            "teacher has {} parameters, student {}",
            teacher.len(),
            student.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("EMA alpha {alpha} outside [0, 1]")));
    }
    ParameterVector::new(
        teacher
            .values
            .iter()
            .zip(&student.values)
            .map(|(t, s)| alpha * t + (1.0 - alpha) * s)
            .collect(),
    )
}

/// Per-sample decode budget `min(L_max - 1, max(L_min, floor(rho * T)))`.
pub fn length_cap(t_cond: usize, rho: f64, l_min: usize, l_max: usize) -> Result<usize> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!("rho {rho} must be > 0")));
    }
    if l_max == 0 || l_min > l_max - 1 {
        return Err(Error::InvalidArgument(format!(
            "need L_min <= L_max - 1, got {l_min} and {l_max}"
        )));
    }
    let raw = (rho * t_cond as f64).floor() as usize;
    Ok(raw.max(l_min).min(l_max - 1))
}

/// `(encoder rate, decoder rate)`.
pub fn differential_lr(eta_dec: f64, ratio: f64) -> Result<(f64, f64)> {
    if !(eta_dec > 0.0 && ratio > 0.0) {
        return Err(Error::InvalidArgument("learning rate and ratio must be > 0".into()));
    }
    Ok((ratio * eta_dec, eta_dec))
}
