use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{mean, median};
use crate::archive::TokenArchive;
use crate::error::{Error, Result};
use crate::seqcore::normalized_similarity;

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.5;
pub const DEFAULT_RELAXED_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRow {
    pub query: usize,
    pub relevant: usize,
    /// 1-based first relevant rank; `archive size + 1` when nothing relevant
    /// was retrieved. `None` for queries without relevant entries.
    pub first_relevant_rank: Option<usize>,
    pub reciprocal_rank: Option<f64>,
    pub retrieved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub queries: usize,
    /// Queries with a nonempty relevance set; the means are over these.
    pub evaluated: usize,
    /// Queries whose relevance set is empty.
    pub without_relevant: usize,
    /// Evaluated queries whose ranking contains no relevant entry.
    pub unretrieved: usize,
    pub recall_at: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub frr_mean: f64,
    pub frr_median: f64,
    pub hit_rate: f64,
    pub rows: Vec<QueryRow>,
}

/// Recall@K, MRR, first-relevant-rank statistics and hit rate.
///
/// `rankings[q]` lists archive indices best first; `relevance[q]` is the set
/// of relevant indices for the same query.
pub fn retrieval_metrics(
    rankings: &[Vec<usize>],
    relevance: &[BTreeSet<usize>],
    k_list: &[usize],
    archive_size: usize,
) -> Result<RetrievalReport> {
    if rankings.len() != relevance.len() {
        return Err(Error::Dimension(format!(
            "{} rankings, {} relevance sets",
            rankings.len(),
            relevance.len()
        )));
    }
    if k_list.contains(&0) {
        return Err(Error::InvalidArgument("Recall@0 is undefined".into()));
    }
    let mut rows = Vec::with_capacity(rankings.len());
    for (q, (ranking, rel)) in rankings.iter().zip(relevance).enumerate() {
        let mut seen = BTreeSet::new();
        if let Some(&bad) = ranking.iter().find(|&&i| i >= archive_size || !seen.insert(i)) {
            return Err(Error::Validation(format!(
                "query {q}: ranking entry {bad} repeated or outside archive of {archive_size}"
            )));
        }
        if rel.is_empty() {
            rows.push(QueryRow {
                query: q,
                relevant: 0,
                first_relevant_rank: None,
                reciprocal_rank: None,
                retrieved: false,
            });
            continue;
        }
        let found = ranking.iter().position(|i| rel.contains(i));
        let frr = found.map_or(archive_size + 1, |p| p + 1);
        rows.push(QueryRow {
            query: q,
            relevant: rel.len(),
            first_relevant_rank: Some(frr),
            reciprocal_rank: Some(if found.is_some() { 1.0 / frr as f64 } else { 0.0 }),
            retrieved: found.is_some(),
        });
    }

    let evaluated: Vec<&QueryRow> = rows.iter().filter(|r| r.first_relevant_rank.is_some()).collect();
    let frrs: Vec<f64> = evaluated
        .iter()
        .filter_map(|r| r.first_relevant_rank)
        .map(|f| f as f64)
        .collect();
    let rr: Vec<f64> = evaluated.iter().filter_map(|r| r.reciprocal_rank).collect();
    let hits: Vec<f64> = evaluated.iter().map(|r| f64::from(u8::from(r.retrieved))).collect();
    let recall_at = k_list
        .iter()
        .map(|&k| {
            let within: Vec<f64> = evaluated
                .iter()
                .map(|r| f64::from(u8::from(r.retrieved && r.first_relevant_rank.unwrap() <= k)))
                .collect();
            (k, mean(&within))
        })
        .collect();
    Ok(RetrievalReport {
        queries: rows.len(),
        evaluated: evaluated.len(),
        without_relevant: rows.len() - evaluated.len(),
        unretrieved: evaluated.iter().filter(|r| !r.retrieved).count(),
        recall_at,
        mrr: mean(&rr),
        frr_mean: mean(&frrs),
        frr_median: median(&frrs),
        hit_rate: mean(&hits),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RelevanceMode {
    /// Same source and temporal overlap of at least `threshold` of the query
    /// source window's length.
    SegmentOverlap { threshold: f64 },
    PhonemeExact,
    /// Normalized phoneme edit similarity of at least `threshold`.
    PhonemeRelaxed { threshold: f64 },
}

impl RelevanceMode {
    pub fn name(&self) -> &'static str {
        match self {
            RelevanceMode::SegmentOverlap { .. } => "segment_overlap",
            RelevanceMode::PhonemeExact => "phoneme_exact",
            RelevanceMode::PhonemeRelaxed { .. } => "phoneme_relaxed",
        }
    }
}

/// Relevant archive indices for each query source segment.
pub fn relevance_sets(
    archive: &TokenArchive,
    queries: &[&str],
    mode: RelevanceMode,
) -> Result<Vec<BTreeSet<usize>>> {
    let entries = archive.entries();
    let needs_phonemes = !matches!(mode, RelevanceMode::SegmentOverlap { .. });
    if needs_phonemes {
        if let Some(e) = entries.iter().find(|e| e.phonemes.is_none()) {
            return Err(Error::Precondition(format!(
                "{} relevance needs phoneme labels; entry {:?} has none",
                mode.name(),
                e.segment_id
            )));
        }
    }
    queries
        .iter()
        .map(|&id| {
            let qi = archive
                .index_of(id)
                .ok_or_else(|| Error::Validation(format!("query segment {id:?} not in archive")))?;
            let q = &entries[qi];
            let set = entries
                .iter()
                .enumerate()
                .filter(|(_, e)| match mode {
                    RelevanceMode::SegmentOverlap { threshold } => {
                        let overlap = (q.end_s.min(e.end_s) - q.start_s.max(e.start_s)).max(0.0);
                        e.source_id == q.source_id && overlap / (q.end_s - q.start_s) >= threshold
                    }
                    RelevanceMode::PhonemeExact => e.phonemes == q.phonemes,
                    RelevanceMode::PhonemeRelaxed { threshold } => {
                        let (a, b) = (q.phonemes.as_deref().unwrap(), e.phonemes.as_deref().unwrap());
                        normalized_similarity(a, b) >= threshold
                    }
                })
                .map(|(i, _)| i)
                .collect();
            Ok(set)
        })
        .collect()
}
