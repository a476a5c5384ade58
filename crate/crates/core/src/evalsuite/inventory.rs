use std::collections::BTreeMap;

use serde::Serialize;

use super::entropy_of_counts;
use crate::error::{Error, Result};
use crate::seqcore::{Alphabet, TokenId, TokenSequence};

pub const DEFAULT_POSITION_BINS: usize = 10;
pub const DEFAULT_TOP_Q: [usize; 3] = [10, 25, 50];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionStat {
    /// 1-based absolute position.
    pub position: usize,
    /// Sequences long enough to have this position.
    pub support: usize,
    pub entropy: f64,
    pub entropy_norm: f64,
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinStat {
    pub bin: usize,
    pub count: usize,
    pub entropy: f64,
    pub entropy_norm: f64,
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InventoryReport {
    pub k: usize,
    pub sequences: usize,
    pub tokens: usize,
    pub entropy: f64,
    pub entropy_bits: f64,
    pub entropy_norm: f64,
    pub effective_vocab: f64,
    pub active: usize,
    pub dead_rate: f64,
    pub top_q_mass: BTreeMap<usize, f64>,
    pub positions: Vec<PositionStat>,
    pub relative_bins: Vec<BinStat>,
    pub bigram_entropy: f64,
    pub bigram_entropy_bits: f64,
    pub next_entropy: f64,
    pub next_entropy_bits: f64,
}

/// Token-inventory statistics over the content views of `seqs`.
///
/// Normalized entropies divide by `ln K`; for `K = 1` they are reported as 0.
pub fn inventory(
    seqs: &[TokenSequence],
    alphabet: &Alphabet,
    bins: usize,
    top_q: &[usize],
) -> Result<InventoryReport> {
    if bins == 0 {
        return Err(Error::InvalidArgument("need at least one position bin".into()));
    }
    if let Some(s) = seqs.iter().find(|s| s.alphabet() != alphabet) {
        return Err(Error::AlphabetMismatch(format!(
            "sequence alphabet size {} vs {}",
            s.alphabet().size,
            alphabet.size
        )));
    }
    let content: Vec<Vec<TokenId>> = seqs.iter().map(TokenSequence::content).collect();
    let total: usize = content.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Empty("corpus has no content tokens".into()));
    }
    let k = alphabet.size as usize;
    let ln_k = (k as f64).ln();
    let norm = |h: f64| if k > 1 { h / ln_k } else { 0.0 };

    let mut unigram = vec![0usize; k];
    for &t in content.iter().flatten() {
        unigram[t as usize] += 1;
    }
    let entropy = entropy_of_counts(unigram.iter().copied());
    let active = unigram.iter().filter(|&&c| c > 0).count();

    let mut sorted = unigram.clone();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let top_q_mass = top_q
        .iter()
        .map(|&q| {
            let mass: usize = sorted.iter().take(q).sum();
            (q, mass as f64 / total as f64)
        })
        .collect();

    let max_len = content.iter().map(Vec::len).max().unwrap_or(0);
    let positions = (1..=max_len)
        .map(|l| {
            let mut counts: BTreeMap<TokenId, usize> = BTreeMap::new();
            let mut support = 0;
            for s in content.iter().filter(|s| s.len() >= l) {
                support += 1;
                *counts.entry(s[l - 1]).or_default() += 1;
            }
            let h = entropy_of_counts(counts.values().copied());
            PositionStat {
                position: l,
                support,
                entropy: h,
                entropy_norm: norm(h),
                active: counts.len(),
            }
        })
        .collect();

    let mut bin_counts: Vec<BTreeMap<TokenId, usize>> = vec![BTreeMap::new(); bins];
    for s in &content {
        for (i, &t) in s.iter().enumerate() {
            // position l = i + 1, bin = floor(B (l - 1) / L)
            let b = bins * i / s.len();
            *bin_counts[b].entry(t).or_default() += 1;
        }
    }
    let relative_bins = bin_counts
        .iter()
        .enumerate()
        .map(|(bin, counts)| {
            let h = entropy_of_counts(counts.values().copied());
            BinStat {
                bin,
                count: counts.values().sum(),
                entropy: h,
                entropy_norm: norm(h),
                active: counts.len(),
            }
        })
        .collect();

    let mut bigrams: BTreeMap<(TokenId, TokenId), usize> = BTreeMap::new();
    for s in &content {
        for w in s.windows(2) {
            *bigrams.entry((w[0], w[1])).or_default() += 1;
        }
    }
    let bigram_entropy = entropy_of_counts(bigrams.values().copied());

    // Conditional next-token entropy weighted by the unigram probability of
    // the left token. Tokens never followed by anything contribute zero.
    let mut successors: BTreeMap<TokenId, Vec<usize>> = BTreeMap::new();
    for (&(a, _), &c) in &bigrams {
        successors.entry(a).or_default().push(c);
    }
    let next_entropy = successors
        .iter()
        .map(|(&a, counts)| unigram[a as usize] as f64 / total as f64 * entropy_of_counts(counts.iter().copied()))
        .sum::<f64>();

    let ln2 = std::f64::consts::LN_2;
    Ok(InventoryReport {
        k,
        sequences: seqs.len(),
        tokens: total,
        entropy,
        entropy_bits: entropy / ln2,
        entropy_norm: norm(entropy),
        effective_vocab: entropy.exp(),
        active,
        dead_rate: 1.0 - active as f64 / k as f64,
        top_q_mass,
        positions,
        relative_bins,
        bigram_entropy,
        bigram_entropy_bits: bigram_entropy / ln2,
        next_entropy,
        next_entropy_bits: next_entropy / ln2,
    })
}
