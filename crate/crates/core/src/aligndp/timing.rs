//! Timing recovery from decoder cross-attention: slicing, a light diagonal
//! Beta prior, frame-to-token posteriors, a monotone Viterbi path, and
//! per-token time intervals.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::paf;
use crate::seqcore::{TokenId, TokenSequence};

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_PRIOR_A: f64 = 2.0;
pub const DEFAULT_PRIOR_B: f64 = 2.0;
pub const DEFAULT_PRIOR_STRENGTH: f64 = 0.25;

/// Token-to-frame attention, `L` rows by `T` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    values: Matrix,
    row_stochastic: bool,
}

impl AttentionMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Validation("attention entries must be >= 0".into()));
        }
        let row_stochastic = values.rows() > 0
            && values
                .row_iter()
                .all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= 1e-5);
        Ok(AttentionMatrix {
            values,
            row_stochastic,
        })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    pub fn is_row_stochastic(&self) -> bool {
        self.row_stochastic
    }

    pub fn tokens(&self) -> usize {
        self.values.rows()
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }
}

/// Frame-to-token state assignment: starts at 0, ends at `L - 1`, and
/// stays or advances by one per frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MonotonePath {
    states: Vec<usize>,
}

impl MonotonePath {
    pub fn new(states: Vec<usize>) -> Result<Self> {
        if states.first() != Some(&0) {
            return Err(Error::Validation("path must start in state 0".into()));
        }
        if states.windows(2).any(|w| w[1] != w[0] && w[1] != w[0] + 1) {
            return Err(Error::Validation("path must stay or advance by one".into()));
        }
        Ok(MonotonePath { states })
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn frames(&self) -> usize {
        self.states.len()
    }

    /// Number of token positions visited.
    pub fn tokens(&self) -> usize {
        self.states.last().map_or(0, |s| s + 1)
    }

    /// `sum_t ln(A[t][state_t] + eps)`.
    pub fn score(&self, a: &Matrix, epsilon: f64) -> f64 {
        self.states
            .iter()
            .enumerate()
            .map(|(t, &s)| (a.get(t, s) + epsilon).ln())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedToken {
    pub token_id: TokenId,
    pub start_s: f64,
    pub end_s: f64,
}

fn beta_row(frames: usize, alpha: f64, beta: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..frames)
        .map(|t| {
            let x = t as f64 / (frames - 1) as f64;
            x.powf(alpha - 1.0) * (1.0 - x).powf(beta - 1.0)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Row-wise Beta prior over frames, one row per token position. Degenerate
/// shapes (`L = 1` or `T = 1`) get a uniform prior.
pub fn beta_prior(tokens: usize, frames: usize, a: f64, b: f64) -> Matrix {
    let mut prior = Matrix::zeros(tokens, frames);
    for l in 0..tokens {
        let row = if tokens == 1 || frames == 1 {
            vec![1.0 / frames as f64; frames]
        } else {
            let pos = l as f64 / (tokens - 1) as f64;
            beta_row(frames, 1.0 + a * pos, 1.0 + b * (1.0 - pos))
        };
        prior.row_mut(l).copy_from_slice(&row);
    }
    prior
}

/// Multiplies each attention row by the Beta prior raised to `omega` and
/// renormalizes with an `epsilon` floor in the denominator.
pub fn apply_beta_prior(
    w: &AttentionMatrix,
    a: f64,
    b: f64,
    omega: f64,
    epsilon: f64,
) -> Result<AttentionMatrix> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::InvalidArgument("Beta shape offsets must be >= 0".into()));
    }
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::InvalidArgument(format!("prior strength {omega} outside [0, 1]")));
    }
    if w.tokens() == 0 || w.frames() == 0 {
        return Err(Error::Empty("attention matrix".into()));
    }
    let prior = beta_prior(w.tokens(), w.frames(), a, b);
    let mut out = Matrix::zeros(w.tokens(), w.frames());
    for l in 0..w.tokens() {
        let weighted: Vec<f64> = w
            .values()
            .row(l)
            .iter()
            .zip(prior.row(l))
            .map(|(&wv, &p)| wv * p.powf(omega))
            .collect();
        let denom = weighted.iter().sum::<f64>() + epsilon;
        for (o, v) in out.row_mut(l).iter_mut().zip(weighted) {
            *o = v / denom;
        }
    }
    AttentionMatrix::new(out)
}

/// Column-normalizes the smoothed attention into `A[t][l]`.
pub fn frame_to_token_posterior(w: &AttentionMatrix, epsilon: f64) -> Matrix {
    let (tokens, frames) = w.values().shape();
    let mut out = Matrix::zeros(frames, tokens);
    for t in 0..frames {
        let denom: f64 = (0..tokens).map(|l| w.values().get(l, t)).sum::<f64>() + epsilon;
        for l in 0..tokens {
            out.set(t, l, w.values().get(l, t) / denom);
        }
    }
    out
}

/// Relative gap below which two prefix scores count as tied. Equal-score
/// paths sum the same logs in different orders, so exact ties can differ in
/// the last bits.
pub const TIE_RELATIVE_TOL: f64 = 1e-12;

fn ties_or_beats(candidate: f64, incumbent: f64) -> bool {
    candidate >= incumbent || incumbent - candidate <= TIE_RELATIVE_TOL * incumbent.abs().max(1.0)
}

/// Maximum-score monotone path through `A` (frames by tokens).
///
/// Among equally scored paths (up to [`TIE_RELATIVE_TOL`]) the one that sits
/// in the lowest state at every frame is returned, i.e. the path stays as
/// long as it can.
pub fn monotone_viterbi(a: &Matrix, epsilon: f64) -> Result<MonotonePath> {
    let (frames, tokens) = a.shape();
    if tokens == 0 {
        return Err(Error::Empty("no token positions to align".into()));
    }
    if frames < tokens {
        return Err(Error::Infeasible(format!(
            "{frames} frames cannot cover {tokens} tokens monotonically"
        )));
    }
    let emit = |t: usize, s: usize| (a.get(t, s) + epsilon).ln();
    let mut score = vec![f64::NEG_INFINITY; frames * tokens];
    score[0] = emit(0, 0);
    for t in 1..frames {
        let hi = t.min(tokens - 1);
        for s in 0..=hi {
            let stay = score[(t - 1) * tokens + s];
            let adv = if s > 0 { score[(t - 1) * tokens + s - 1] } else { f64::NEG_INFINITY };
            score[t * tokens + s] = stay.max(adv) + emit(t, s);
        }
    }

    let mut states = vec![0usize; frames];
    let mut s = tokens - 1;
    states[frames - 1] = s;
    for t in (1..frames).rev() {
        // Prefer the lower predecessor on ties: that keeps every earlier
        // frame in the lowest state an optimal path allows.
        if s > 0 && ties_or_beats(score[(t - 1) * tokens + s - 1], score[(t - 1) * tokens + s]) {
            s -= 1;
        }
        states[t - 1] = s;
    }
    MonotonePath::new(states)
}

/// Converts a monotone path into per-token time intervals.
///
/// Frame `t` (1-based) has center `win_start + (t - 1/2) * dt`; each token
/// spans its support frames' centers widened by half a frame on each side.
pub fn token_timestamps(
    path: &MonotonePath,
    tokens: &TokenSequence,
    win_start_s: f64,
    frame_dt_s: f64,
) -> Result<Vec<TimedToken>> {
    let content = tokens.content();
    if path.frames() == 0 {
        return Err(Error::Empty("empty path".into()));
    }
    if content.len() != path.tokens() {
        return Err(Error::Dimension(format!(
            "path visits {} token positions, sequence has {} content tokens",
            path.tokens(),
            content.len()
        )));
    }
    if !(frame_dt_s > 0.0) {
        return Err(Error::InvalidArgument("frame duration must be > 0".into()));
    }
    let center = |t: usize| win_start_s + (t as f64 + 1.0 - 0.5) * frame_dt_s;
    let mut first = vec![usize::MAX; content.len()];
    let mut last = vec![0usize; content.len()];
    for (t, &s) in path.states().iter().enumerate() {
        first[s] = first[s].min(t);
        last[s] = t;
    }
    Ok(content
        .iter()
        .enumerate()
        .map(|(l, &id)| TimedToken {
            token_id: id,
            start_s: center(first[l]) - frame_dt_s / 2.0,
            end_s: center(last[l]) + frame_dt_s / 2.0,
        })
        .collect())
}

/// Raw cross-attention weights, heads by decoder positions by encoder frames.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    heads: usize,
    dec_len: usize,
    enc_len: usize,
    data: Vec<f64>,
}

impl AttentionTensor {
    pub fn new(heads: usize, dec_len: usize, enc_len: usize, data: Vec<f64>) -> Result<Self> {
        if heads * dec_len * enc_len != data.len() {
            return Err(Error::Dimension(format!(
                "{heads}x{dec_len}x{enc_len} tensor needs {} values, got {}",
                heads * dec_len * enc_len,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation("attention weights must be finite and >= 0".into()));
        }
        Ok(AttentionTensor {
            heads,
            dec_len,
            enc_len,
            data,
        })
    }

    pub fn from_heads(heads: &[Matrix]) -> Result<Self> {
        let first = heads
            .first()
            .ok_or_else(|| Error::Empty("no attention heads".into()))?;
        let (dec_len, enc_len) = first.shape();
        let mut data = Vec::with_capacity(heads.len() * dec_len * enc_len);
        for (h, m) in heads.iter().enumerate() {
            if m.shape() != (dec_len, enc_len) {
                return Err(Error::Dimension(format!(
                    "head {h} is {:?}, head 0 is {:?}",
                    m.shape(),
                    (dec_len, enc_len)
                )));
            }
            data.extend_from_slice(m.data());
        }
        Self::new(heads.len(), dec_len, enc_len, data)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.heads, self.dec_len, self.enc_len)
    }

    pub fn get(&self, h: usize, i: usize, t: usize) -> f64 {
        self.data[(h * self.dec_len + i) * self.enc_len + t]
    }
}

/// Manifest describing one PAF1 file per head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionManifest {
    #[serde(rename = "H")]
    pub heads: usize,
    #[serde(rename = "T_dec")]
    pub dec_len: usize,
    #[serde(rename = "T_enc")]
    pub enc_len: usize,
    pub layer: i64,
    /// Head files, relative to the manifest's directory.
    pub files: Vec<String>,
}

pub fn load_attention(manifest_path: impl AsRef<Path>) -> Result<(AttentionManifest, AttentionTensor)> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: AttentionManifest = serde_json::from_str(&text)?;
    if manifest.files.len() != manifest.heads {
        return Err(Error::Validation(format!(
            "manifest lists {} files for H = {}",
            manifest.files.len(),
            manifest.heads
        )));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let heads = manifest
        .files
        .iter()
        .map(|f| paf::load(base.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let tensor = AttentionTensor::from_heads(&heads)?;
    if tensor.shape() != (manifest.heads, manifest.dec_len, manifest.enc_len) {
        return Err(Error::Dimension(format!(
            "head files are {:?}, manifest says {:?}",
            tensor.shape(),
            (manifest.heads, manifest.dec_len, manifest.enc_len)
        )));
    }
    Ok((manifest, tensor))
}

/// Content rows of `decoded` as `(decoder position, token id)`: every
/// non-reserved position before the first EOS. Without an EOS the whole
/// sequence is scanned.
pub fn content_positions(decoded: &TokenSequence) -> Vec<(usize, TokenId)> {
    let alphabet = decoded.alphabet();
    decoded
        .tokens()
        .iter()
        .copied()
        .enumerate()
        .take_while(|&(_, id)| id != alphabet.eos)
        .filter(|&(_, id)| alphabet.is_content(id))
        .collect()
}

/// Head-averaged token-to-frame attention restricted to content tokens and
/// valid encoder frames, rows renormalized to sum to one.
///
/// A row whose mass over valid frames is zero becomes uniform.
pub fn slice_attention(
    raw: &AttentionTensor,
    decoded: &TokenSequence,
    enc_mask: &[bool],
) -> Result<AttentionMatrix> {
    let (heads, dec_len, enc_len) = raw.shape();
    if heads == 0 {
        return Err(Error::Empty("no attention heads".into()));
    }
    if enc_mask.len() != enc_len {
        return Err(Error::Dimension(format!(
            "encoder mask has {} entries, tensor has {enc_len} frames",
            enc_mask.len()
        )));
    }
    if decoded.len() > dec_len {
        return Err(Error::Dimension(format!(
            "decoded sequence has {} positions, tensor has {dec_len}",
            decoded.len()
        )));
    }
    let rows = content_positions(decoded);
    if rows.is_empty() {
        return Err(Error::Empty("decoded sequence has no content tokens".into()));
    }
    let cols: Vec<usize> = (0..enc_len).filter(|&t| enc_mask[t]).collect();
    if cols.is_empty() {
        return Err(Error::Empty("encoder mask selects no frames".into()));
    }
    let mut out = Matrix::zeros(rows.len(), cols.len());
    for (r, &(pos, _)) in rows.iter().enumerate() {
        let row = out.row_mut(r);
        for (c, &t) in cols.iter().enumerate() {
            row[c] = (0..heads).map(|h| raw.get(h, pos, t)).sum::<f64>() / heads as f64;
        }
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        } else {
            let u = 1.0 / row.len() as f64;
            row.iter_mut().for_each(|v| *v = u);
        }
    }
    AttentionMatrix::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqcore::Alphabet;
    use proptest::prelude::*;

    fn attn(rows: &[&[f64]]) -> AttentionMatrix {
        AttentionMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn enumerate_paths(frames: usize, tokens: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        // Choose which of frames 1..T advance: exactly L-1 of them.
        for bits in 0u32..(1 << (frames - 1)) {
            if bits.count_ones() as usize != tokens - 1 {
                continue;
            }
            let mut s = 0;
            let mut p = vec![0];
            for t in 1..frames {
                if bits >> (t - 1) & 1 == 1 {
                    s += 1;
                }
                p.push(s);
            }
            out.push(p);
        }
        out
    }

    #[test]
    fn flat_prior_is_identity_up_to_epsilon() {
        let w = attn(&[&[0.2, 0.3, 0.5], &[0.6, 0.1, 0.3]]);
        for (a, b, omega) in [(0.0, 0.0, 1.0), (2.0, 3.0, 0.0)] {
            let out = apply_beta_prior(&w, a, b, omega, 1e-8).unwrap();
            for (x, y) in out.values().data().iter().zip(w.values().data()) {
                assert!((x - y).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn single_token_row_is_unchanged() {
        let w = attn(&[&[0.1, 0.2, 0.7]]);
        let out = apply_beta_prior(&w, 2.0, 2.0, 1.0, 1e-8).unwrap();
        for (x, y) in out.values().data().iter().zip(w.values().data()) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn prior_matches_scalar_beta_kernel() {
        // L=2, T=3, a=b=2, omega=1. Frame positions x = 0, 0.5, 1.
        // Row 0: alpha=1, beta=3 -> (1-x)^2 = 1, 0.25, 0 -> /1.25
        // Row 1: alpha=3, beta=1 -> x^2     = 0, 0.25, 1 -> /1.25
        let w = attn(&[&[0.5, 0.3, 0.2], &[0.1, 0.4, 0.5]]);
        let eps = 1e-8;
        let out = apply_beta_prior(&w, 2.0, 2.0, 1.0, eps).unwrap();
        let p0 = [1.0 / 1.25, 0.25 / 1.25, 0.0];
        let p1 = [0.0, 0.25 / 1.25, 1.0 / 1.25];
        for (l, p) in [p0, p1].iter().enumerate() {
            let num: Vec<f64> = (0..3).map(|t| w.values().get(l, t) * p[t]).collect();
            let den: f64 = num.iter().sum::<f64>() + eps;
            for t in 0..3 {
                assert!((out.values().get(l, t) - num[t] / den).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn posterior_examples() {
        let single = attn(&[&[0.25, 0.25, 0.5]]);
        let a = frame_to_token_posterior(&single, 1e-8);
        for t in 0..3 {
            assert!((a.get(t, 0) - 1.0).abs() < 1e-6);
        }

        let zero_col = attn(&[&[0.5, 0.0, 0.5], &[1.0, 0.0, 0.0]]);
        let a = frame_to_token_posterior(&zero_col, 1e-8);
        assert_eq!(a.row(1), &[0.0, 0.0]);

        let w = attn(&[&[0.6, 0.4], &[0.2, 0.8]]);
        let a = frame_to_token_posterior(&w, 1e-8);
        let expect = [[0.6 / 0.8, 0.2 / 0.8], [0.4 / 1.2, 0.8 / 1.2]];
        for t in 0..2 {
            for l in 0..2 {
                assert!((a.get(t, l) - expect[t][l]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn viterbi_examples() {
        let a = Matrix::from_rows(&[[1.0]; 5]).unwrap();
        assert_eq!(monotone_viterbi(&a, 1e-8).unwrap().states(), &[0; 5]);

        let mut diag = Matrix::zeros(4, 4);
        for t in 0..4 {
            for l in 0..4 {
                diag.set(t, l, if t == l { 0.97 } else { 0.01 });
            }
        }
        let p = monotone_viterbi(&diag, 1e-8).unwrap();
        assert_eq!(p.states(), &[0, 1, 2, 3]);

        let uniform = Matrix::from_rows(&[[0.25; 3]; 6]).unwrap();
        let p = monotone_viterbi(&uniform, 1e-8).unwrap();
        assert_eq!(p.states(), &[0, 0, 0, 0, 1, 2]);

        assert!(matches!(
            monotone_viterbi(&Matrix::zeros(2, 3), 1e-8),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn timestamp_examples() {
        let ab = Alphabet::with_size(8).unwrap();
        let one = TokenSequence::new(vec![3], ab).unwrap();
        let p = MonotonePath::new(vec![0; 4]).unwrap();
        let ts = token_timestamps(&p, &one, 0.0, 0.02).unwrap();
        assert_eq!(ts.len(), 1);
        assert!(ts[0].start_s.abs() < 1e-12 && (ts[0].end_s - 0.08).abs() < 1e-12);

        let three = TokenSequence::new(vec![1, 2, 3], ab).unwrap();
        let p = MonotonePath::new(vec![0, 1, 2]).unwrap();
        for t in token_timestamps(&p, &three, 0.0, 0.04).unwrap() {
            assert!((t.end_s - t.start_s - 0.04).abs() < 1e-12);
        }

        let base = token_timestamps(&p, &three, 0.0, 0.04).unwrap();
        let moved = token_timestamps(&p, &three, 1.0, 0.04).unwrap();
        for (x, y) in base.iter().zip(&moved) {
            assert!((y.start_s - x.start_s - 1.0).abs() < 1e-12);
            assert!((y.end_s - x.end_s - 1.0).abs() < 1e-12);
        }

        assert!(token_timestamps(&p, &one, 0.0, 0.02).is_err());
    }

    #[test]
    fn slicing_drops_specials_and_masked_frames() {
        let ab = Alphabet::with_size(8).unwrap();
        // BOS, 5, 6, EOS over 3 encoder frames, one head
        let decoded = TokenSequence::new(vec![ab.bos, 5, 6, ab.eos], ab).unwrap();
        let head = Matrix::from_rows(&[
            [0.3, 0.3, 0.4],
            [0.2, 0.2, 0.6],
            [0.1, 0.6, 0.3],
            [0.5, 0.25, 0.25],
        ])
        .unwrap();
        let raw = AttentionTensor::from_heads(&[head.clone()]).unwrap();
        let w = slice_attention(&raw, &decoded, &[true; 3]).unwrap();
        assert_eq!(w.values().row(0), head.row(1));
        assert_eq!(w.values().row(1), head.row(2));
        assert!(w.is_row_stochastic());

        let twice = AttentionTensor::from_heads(&[head.clone(), head]).unwrap();
        assert_eq!(slice_attention(&twice, &decoded, &[true; 3]).unwrap(), w);
    }

    #[test]
    fn slicing_hand_oracle_two_heads_with_padding() {
        let ab = Alphabet::with_size(8).unwrap();
        let decoded = TokenSequence::new(vec![ab.bos, 1, ab.eos], ab).unwrap();
        let h0 = Matrix::from_rows(&[[0.25; 4], [0.1, 0.2, 0.3, 0.4], [0.25; 4]]).unwrap();
        let h1 = Matrix::from_rows(&[[0.25; 4], [0.3, 0.3, 0.2, 0.2], [0.25; 4]]).unwrap();
        let raw = AttentionTensor::from_heads(&[h0, h1]).unwrap();
        let w = slice_attention(&raw, &decoded, &[true, true, true, false]).unwrap();
        // means: 0.2, 0.25, 0.25 (0.3 masked) -> / 0.7
        let expect = [0.2 / 0.7, 0.25 / 0.7, 0.25 / 0.7];
        for (x, y) in w.values().row(0).iter().zip(expect) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn slicing_without_eos_uses_full_length() {
        let ab = Alphabet::with_size(8).unwrap();
        let decoded = TokenSequence::new(vec![ab.bos, 1, 2], ab).unwrap();
        let raw = AttentionTensor::new(1, 3, 2, vec![0.5; 6]).unwrap();
        let w = slice_attention(&raw, &decoded, &[true, true]).unwrap();
        assert_eq!(w.tokens(), 2);

        let only_specials = TokenSequence::new(vec![ab.bos, ab.eos, ab.pad], ab).unwrap();
        assert!(matches!(
            slice_attention(&raw, &only_specials, &[true, true]),
            Err(Error::Empty(_))
        ));
    }

    proptest! {
        #[test]
        fn viterbi_beats_every_enumerated_path(
            frames in 1usize..=7,
            tokens_hint in 1usize..=7,
            vals in prop::collection::vec(0.001f64..1.0, 49),
        ) {
            let tokens = tokens_hint.min(frames);
            let a = Matrix::new(frames, tokens, vals[..frames * tokens].to_vec()).unwrap();
            let best = monotone_viterbi(&a, 1e-8).unwrap();
            let best_score = best.score(&a, 1e-8);
            for p in enumerate_paths(frames, tokens) {
                let s = MonotonePath::new(p).unwrap().score(&a, 1e-8);
                prop_assert!(best_score >= s - 1e-12);
            }
            prop_assert_eq!(best.tokens(), tokens);
        }

        #[test]
        fn prior_rows_normalize(
            tokens in 1usize..6,
            frames in 1usize..8,
            vals in prop::collection::vec(0.01f64..1.0, 48),
            a in 0.0f64..4.0,
            b in 0.0f64..4.0,
            omega in 0.0f64..=1.0,
        ) {
            let mut m = Matrix::new(tokens, frames, vals[..tokens * frames].to_vec()).unwrap();
            for l in 0..tokens {
                let s: f64 = m.row(l).iter().sum();
                m.row_mut(l).iter_mut().for_each(|v| *v /= s);
            }
            let out = apply_beta_prior(&AttentionMatrix::new(m).unwrap(), a, b, omega, 1e-8).unwrap();
            // The first and last frame can carry zero prior mass for extreme
            // rows, but interior frames keep every row strictly positive.
            if frames > 2 || omega == 0.0 || tokens == 1 || (a == 0.0 && b == 0.0) {
                for row in out.values().row_iter() {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
                }
            }
        }
    }
}
