use serde::Serialize;

use crate::error::{Error, Result};

/// `ceil(log2 K)`: bits per token under a fixed-length code.
pub fn bits_per_token(k: usize) -> Result<u32> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("codebook size {k} < 2")));
    }
    Ok(usize::BITS - (k - 1).leading_zeros())
}

/// Tokens per second for a mean length over fixed-duration segments.
pub fn token_rate(mean_length: f64, segment_s: f64) -> Result<f64> {
    if !(segment_s > 0.0) {
        return Err(Error::InvalidArgument("segment duration must be > 0".into()));
    }
    Ok(mean_length / segment_s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineComparison {
    pub baseline_tokens: usize,
    /// Baseline token count over this archive's token count.
    pub compression: f64,
    /// `1 - tokens / baseline_tokens`.
    pub reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompactnessReport {
    pub segments: usize,
    pub tokens: usize,
    pub mean_length: f64,
    pub token_rate: f64,
    pub bits_per_token: u32,
    pub bit_rate: f64,
    pub baseline: Option<BaselineComparison>,
}

/// Two-decimal presentation of a [`CompactnessReport`].
///
/// Each derived cell is computed from the already rounded cell it depends
/// on: the token rate from the exact mean length, and the bit rate from the
/// rounded token rate. Ratios are rounded on their own.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompactnessTable {
    pub mean_length: f64,
    pub token_rate: f64,
    pub bits_per_token: u32,
    pub bit_rate: f64,
    pub compression: Option<f64>,
    pub reduction_percent: Option<f64>,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl CompactnessReport {
    pub fn table(&self) -> CompactnessTable {
        let token_rate = round2(self.token_rate);
        CompactnessTable {
            mean_length: round2(self.mean_length),
            token_rate,
            bits_per_token: self.bits_per_token,
            bit_rate: round2(token_rate * f64::from(self.bits_per_token)),
            compression: self.baseline.as_ref().map(|b| round2(b.compression)),
            reduction_percent: self.baseline.as_ref().map(|b| round2(100.0 * b.reduction)),
        }
    }
}

/// Archive compactness from totals: `segments` windows of `segment_s`
/// seconds holding `tokens` tokens over a `k`-symbol codebook, optionally
/// compared against a baseline archive of the same segments.
pub fn compactness_from_totals(
    segments: usize,
    tokens: usize,
    segment_s: f64,
    k: usize,
    baseline_tokens: Option<usize>,
) -> Result<CompactnessReport> {
    if segments == 0 {
        return Err(Error::Empty("no segments".into()));
    }
    let mean_length = tokens as f64 / segments as f64;
    let rate = token_rate(mean_length, segment_s)?;
    let bits = bits_per_token(k)?;
    let baseline = match baseline_tokens {
        None => None,
        Some(b) => {
            if b == 0 || tokens == 0 {
                return Err(Error::InvalidArgument("token totals must be > 0 to compare".into()));
            }
            Some(BaselineComparison {
                baseline_tokens: b,
                compression: b as f64 / tokens as f64,
                reduction: 1.0 - tokens as f64 / b as f64,
            })
        }
    };
    Ok(CompactnessReport {
        segments,
        tokens,
        mean_length,
        token_rate: rate,
        bits_per_token: bits,
        bit_rate: rate * f64::from(bits),
        baseline,
    })
}

/// Per-segment form of [`compactness_from_totals`]. A baseline must cover
/// the same number of segments.
pub fn compactness(
    lengths: &[usize],
    segment_s: f64,
    k: usize,
    baseline: Option<&[usize]>,
) -> Result<CompactnessReport> {
    if let Some(b) = baseline {
        if b.len() != lengths.len() {
            return Err(Error::Dimension(format!(
                "{} segments vs {} baseline segments",
                lengths.len(),
                b.len()
            )));
        }
    }
    compactness_from_totals(
        lengths.len(),
        lengths.iter().sum(),
        segment_s,
        k,
        baseline.map(|b| b.iter().sum()),
    )
}
