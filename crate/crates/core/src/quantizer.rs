//! Nearest-centroid tokenization, run-length deduplication, EMA codebook
//! maintenance, and the frame-level loss values that train the geometric
//! tokenizer.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aligndp::ctc_noblank_logprob;
use crate::error::{Error, Result};
use crate::matrix::{dot, log_softmax, log_sum_exp, squared_distance, Matrix};
use crate::paf;
use crate::seqcore::{Alphabet, TokenId, TokenSequence};

pub const DEFAULT_EMA_DECAY: f64 = 0.99;
pub const DEFAULT_EMA_EPSILON: f64 = 1e-5;

/// `K` centroids of dimension `d` plus the running EMA statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Matrix,
    ema_counts: Vec<f64>,
    ema_sums: Matrix,
    decay: f64,
    epsilon: f64,
}

/// JSON sidecar written next to the centroid matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookSidecar {
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    pub decay: f64,
    pub epsilon: f64,
    pub ema_counts: Vec<f64>,
}

impl Codebook {
    /// Fresh codebook: every centroid starts with unit count and its own
    /// position as the running sum.
    pub fn new(centroids: Matrix, decay: f64, epsilon: f64) -> Result<Self> {
        let counts = vec![1.0; centroids.rows()];
        let sums = centroids.clone();
        Self::from_parts(centroids, counts, sums, decay, epsilon)
    }

    pub fn with_defaults(centroids: Matrix) -> Result<Self> {
        Self::new(centroids, DEFAULT_EMA_DECAY, DEFAULT_EMA_EPSILON)
    }

    pub fn from_parts(
        centroids: Matrix,
        ema_counts: Vec<f64>,
        ema_sums: Matrix,
        decay: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if centroids.rows() == 0 || centroids.cols() == 0 {
            return Err(Error::Config("codebook needs K >= 1 and d >= 1".into()));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::Config(format!("EMA decay {decay} outside (0, 1]")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {epsilon} must be positive")));
        }
        if ema_counts.len() != centroids.rows() || ema_sums.shape() != centroids.shape() {
            return Err(Error::Dimension(
                "EMA statistics do not match centroid shape".into(),
            ));
        }
        if ema_counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Validation("EMA counts must be finite and >= 0".into()));
        }
        Ok(Codebook {
            centroids,
            ema_counts,
            ema_sums,
            decay,
            epsilon,
        })
    }

    pub fn size(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn ema_counts(&self) -> &[f64] {
        &self.ema_counts
    }

    pub fn ema_sums(&self) -> &Matrix {
        &self.ema_sums
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn sidecar(&self) -> CodebookSidecar {
        CodebookSidecar {
            k: self.size(),
            d: self.dim(),
            decay: self.decay,
            epsilon: self.epsilon,
            ema_counts: self.ema_counts.clone(),
        }
    }

    /// Where the sidecar for a centroid file lives: `<path>.json`.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        paf::save(path, &self.centroids)?;
        let side = Self::sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        fs::write(&side, json).map_err(|e| Error::io(side, e))
    }

    /// Loads centroids and sidecar. The EMA sums are not persisted; they are
    /// rebuilt as `centroid * (count + epsilon)`, which is the value that
    /// produced the stored centroid.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let centroids = paf::load(path)?;
        let side = Self::sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: CodebookSidecar = serde_json::from_str(&text)?;
        if meta.k != centroids.rows() || meta.d != centroids.cols() {
            return Err(Error::Validation(format!(
                "sidecar says {}x{}, centroid file is {}x{}",
                meta.k,
                meta.d,
                centroids.rows(),
                centroids.cols()
            )));
        }
        let mut sums = centroids.clone();
        for (a, &count) in meta.ema_counts.iter().enumerate().take(meta.k) {
            for v in sums.row_mut(a) {
                *v *= count + meta.epsilon;
            }
        }
        Self::from_parts(centroids, meta.ema_counts, sums, meta.decay, meta.epsilon)
    }
}

fn check_dim(z: &Matrix, cb: &Codebook) -> Result<()> {
    if z.cols() != cb.dim() {
        return Err(Error::Dimension(format!(
            "frames have dimension {}, codebook has {}",
            z.cols(),
            cb.dim()
        )));
    }
    Ok(())
}

/// Index of the nearest centroid under squared Euclidean distance, ties to
/// the lowest index.
pub fn nearest_centroid(frame: &[f64], centroids: &Matrix) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (a, c) in centroids.row_iter().enumerate() {
        let d = squared_distance(frame, c);
        if d < best_d {
            best = a;
            best_d = d;
        }
    }
    best
}

/// Raw (frame-synchronous) token sequence for `z`.
pub fn assign_tokens(z: &Matrix, cb: &Codebook, alphabet: &Alphabet) -> Result<TokenSequence> {
    check_dim(z, cb)?;
    if cb.size() != alphabet.size as usize {
        return Err(Error::AlphabetMismatch(format!(
            "codebook has {} centroids, alphabet has {} tokens",
            cb.size(),
            alphabet.size
        )));
    }
    let tokens = z
        .row_iter()
        .map(|f| nearest_centroid(f, cb.centroids()) as TokenId)
        .collect();
    TokenSequence::new(tokens, *alphabet)
}

/// Quantized embeddings: the assigned centroid for every frame.
pub fn quantize(z: &Matrix, cb: &Codebook) -> Result<Matrix> {
    check_dim(z, cb)?;
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for (t, f) in z.row_iter().enumerate() {
        let a = nearest_centroid(f, cb.centroids());
        out.row_mut(t).copy_from_slice(cb.centroids().row(a));
    }
    Ok(out)
}

/// Collapses maximal runs of equal adjacent tokens.
pub fn dedup(raw: &TokenSequence) -> TokenSequence {
    let mut tokens = raw.tokens().to_vec();
    tokens.dedup();
    TokenSequence::new(tokens, *raw.alphabet()).expect("dedup keeps ids valid")
}

/// One EMA step of the count/sum statistics followed by the centroid
/// refresh `c_a = sum_a / (count_a + eps)`.
pub fn ema_update(cb: &Codebook, z: &Matrix, assignments: &TokenSequence) -> Result<Codebook> {
    check_dim(z, cb)?;
    if assignments.len() != z.rows() {
        return Err(Error::Dimension(format!(
            "{} assignments for {} frames",
            assignments.len(),
            z.rows()
        )));
    }
    let k = cb.size();
    let d = cb.dim();
    let mut batch_counts = vec![0.0; k];
    let mut batch_sums = Matrix::zeros(k, d);
    for (frame, &a) in z.row_iter().zip(assignments.tokens()) {
        let a = a as usize;
        if a >= k {
            return Err(Error::Validation(format!(
                "assignment {a} outside codebook of size {k}"
            )));
        }
        batch_counts[a] += 1.0;
        for (s, v) in batch_sums.row_mut(a).iter_mut().zip(frame) {
            *s += v;
        }
    }

    let decay = cb.decay;
    let mut next = cb.clone();
    for a in 0..k {
        next.ema_counts[a] = decay * cb.ema_counts[a] + (1.0 - decay) * batch_counts[a];
        let denom = next.ema_counts[a] + cb.epsilon;
        for j in 0..d {
            let s = decay * cb.ema_sums.get(a, j) + (1.0 - decay) * batch_sums.get(a, j);
            next.ema_sums.set(a, j, s);
            next.centroids.set(a, j, s / denom);
        }
    }
    Ok(next)
}

/// Frame-wise softmax over dot-product logits `z_t . c_a`.
pub fn token_posteriors(z: &Matrix, cb: &Codebook) -> Result<Matrix> {
    check_dim(z, cb)?;
    let k = cb.size();
    let mut out = Matrix::zeros(z.rows(), k);
    let mut logits = vec![0.0; k];
    for (t, f) in z.row_iter().enumerate() {
        for (a, c) in cb.centroids().row_iter().enumerate() {
            logits[a] = dot(f, c);
        }
        for (o, lp) in out.row_mut(t).iter_mut().zip(log_softmax(&logits)) {
            *o = lp.exp();
        }
    }
    Ok(out)
}

/// Frame-level InfoNCE over DTW-paired frames, averaged over the pairing.
pub fn contrastive_loss(
    anchor: &Matrix,
    positive: &Matrix,
    pairing: &[(usize, usize)],
    negatives: &Matrix,
    temperature: f64,
) -> Result<f64> {
    if pairing.is_empty() {
        return Err(Error::Empty("contrastive pairing".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature {temperature} must be > 0"
        )));
    }
    let d = anchor.cols();
    if positive.cols() != d || (negatives.rows() > 0 && negatives.cols() != d) {
        return Err(Error::Dimension("anchor/positive/negative dims differ".into()));
    }
    let mut total = 0.0;
    let mut scores = Vec::with_capacity(negatives.rows() + 1);
    for &(t, ts) in pairing {
        if t >= anchor.rows() || ts >= positive.rows() {
            return Err(Error::InvalidArgument(format!(
                "pair ({t}, {ts}) out of range"
            )));
        }
        let z = anchor.row(t);
        let pos = dot(z, positive.row(ts)) / temperature;
        scores.clear();
        scores.push(pos);
        scores.extend(negatives.row_iter().map(|n| dot(z, n) / temperature));
        total += log_sum_exp(&scores) - pos;
    }
    Ok(total / pairing.len() as f64)
}

fn mean_sq_dist(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.rows() == 0 {
        return Err(Error::Empty("commitment view has no frames".into()));
    }
    let total: f64 = a
        .row_iter()
        .zip(b.row_iter())
        .map(|(x, y)| squared_distance(x, y))
        .sum();
    Ok(total / a.rows() as f64)
}

/// Commitment term: per-view mean squared distance to the assigned
/// centroid, summed over the two views.
pub fn commitment_loss(z: &Matrix, zq: &Matrix, z_pos: &Matrix, zq_pos: &Matrix) -> Result<f64> {
    Ok(mean_sq_dist(z, zq)? + mean_sq_dist(z_pos, zq_pos)?)
}

/// Symmetric no-blank CTC sequence loss between two views: each view's
/// deduplicated tokens scored under the other view's posteriors.
pub fn sequence_consistency_loss(
    tokens: &TokenSequence,
    tokens_pos: &TokenSequence,
    posteriors: &Matrix,
    posteriors_pos: &Matrix,
) -> Result<f64> {
    let forward = -ctc_noblank_logprob(tokens_pos, posteriors)?;
    let backward = -ctc_noblank_logprob(tokens, posteriors_pos)?;
    Ok(0.5 * (forward + backward))
}

/// `gamma * mean_contrast / (mean_seq + epsilon)`.
pub fn adaptive_ctc_weight(mean_contrast: f64, mean_seq: f64, gamma: f64, epsilon: f64) -> f64 {
    gamma * mean_contrast / (mean_seq + epsilon)
}
