//! Aggregate evaluation reports over tokenized corpora.
//!
//! All entropies are in nats; reports carry a bits copy where convenient.

mod compactness;
mod consistency;
mod inventory;
mod retrieval;
mod sweep;

pub use compactness::{
    bits_per_token, compactness, compactness_from_totals, token_rate, BaselineComparison,
    CompactnessReport, CompactnessTable,
};
pub use consistency::{
    collapsed_pair_rate, consistency_report, exact_collision_rate, low_diversity_rate,
    unique_ratio, ConsistencyReport, LowDiversityReport, PairRow, DEFAULT_COLLAPSE_THRESHOLD,
};
pub use inventory::{inventory, BinStat, InventoryReport, PositionStat, DEFAULT_POSITION_BINS, DEFAULT_TOP_Q};
pub use retrieval::{
    relevance_sets, retrieval_metrics, QueryRow, RelevanceMode, RetrievalReport,
    DEFAULT_OVERLAP_THRESHOLD, DEFAULT_RELAXED_THRESHOLD,
};
pub use sweep::{sweep_report, Summary, SweepPair, SweepReport, DEFAULT_SWEEP_THRESHOLDS};

use crate::seqcore::TokenSequence;

pub const EVAL_SCHEMA: &str = "pairalign-eval/1";

/// Anchor/positive tokenizations of the same underlying segments.
pub type PairSet = [(TokenSequence, TokenSequence)];

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Entropy in nats of a count vector; zero counts contribute nothing.
pub(crate) fn entropy_of_counts<I: IntoIterator<Item = usize>>(counts: I) -> f64 {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    -counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            p * p.ln()
        })
        .sum::<f64>()
}
