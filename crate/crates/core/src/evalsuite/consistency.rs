use std::collections::{HashMap, HashSet};

use serde::Serialize;

use super::{mean, PairSet};
use crate::error::{Error, Result};
use crate::seqcore::{edit_script, edit_similarity, exact_match, jaccard_unigram, TokenId, TokenSequence};

pub const DEFAULT_COLLAPSE_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRow {
    pub index: usize,
    pub jaccard: f64,
    pub similarity: f64,
    pub exact: bool,
    pub anchor_len: usize,
    pub positive_len: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub pairs: usize,
    pub mean_jaccard: f64,
    pub mean_similarity: f64,
    pub exact_match_rate: f64,
    /// Averaged over both streams, i.e. total content length over `2N`.
    pub mean_length: f64,
    pub mean_substitutions: f64,
    pub mean_insertions: f64,
    pub mean_deletions: f64,
    pub rows: Vec<PairRow>,
}

pub fn consistency_report(pairs: &PairSet) -> Result<ConsistencyReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("no pairs".into()));
    }
    let rows = pairs
        .iter()
        .enumerate()
        .map(|(index, (a, p))| {
            let script = edit_script(a, p)?;
            Ok(PairRow {
                index,
                jaccard: jaccard_unigram(a, p)?,
                similarity: edit_similarity(a, p)?,
                exact: exact_match(a, p)?,
                anchor_len: a.content_len(),
                positive_len: p.content_len(),
                substitutions: script.substitutions,
                insertions: script.insertions,
                deletions: script.deletions,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let col = |f: &dyn Fn(&PairRow) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
    let total_len: usize = rows.iter().map(|r| r.anchor_len + r.positive_len).sum();
    Ok(ConsistencyReport {
        pairs: rows.len(),
        mean_jaccard: col(&|r| r.jaccard),
        mean_similarity: col(&|r| r.similarity),
        exact_match_rate: col(&|r| f64::from(u8::from(r.exact))),
        mean_length: total_len as f64 / (2 * rows.len()) as f64,
        mean_substitutions: col(&|r| r.substitutions as f64),
        mean_insertions: col(&|r| r.insertions as f64),
        mean_deletions: col(&|r| r.deletions as f64),
        rows,
    })
}

/// Distinct content tokens over content length; `None` for an empty sequence.
pub fn unique_ratio(seq: &TokenSequence) -> Option<f64> {
    let content = seq.content();
    if content.is_empty() {
        return None;
    }
    let unique: HashSet<TokenId> = content.iter().copied().collect();
    Some(unique.len() as f64 / content.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowDiversityReport {
    pub threshold: f64,
    pub rate: f64,
    pub collapsed: usize,
    pub considered: usize,
    /// Empty sequences, left out of the rate because their ratio is undefined.
    pub excluded_empty: usize,
}

pub fn low_diversity_rate(seqs: &[TokenSequence], threshold: f64) -> LowDiversityReport {
    let ratios: Vec<f64> = seqs.iter().filter_map(unique_ratio).collect();
    let collapsed = ratios.iter().filter(|&&r| r <= threshold).count();
    LowDiversityReport {
        threshold,
        rate: if ratios.is_empty() {
            0.0
        } else {
            collapsed as f64 / ratios.len() as f64
        },
        collapsed,
        considered: ratios.len(),
        excluded_empty: seqs.len() - ratios.len(),
    }
}

fn is_collapsed(seq: &TokenSequence, threshold: f64) -> bool {
    unique_ratio(seq).is_some_and(|r| r <= threshold)
}

/// Fraction of pairs in which the anchor or the positive is low-diversity.
pub fn collapsed_pair_rate(pairs: &PairSet, threshold: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("no pairs".into()));
    }
    let hits = pairs
        .iter()
        .filter(|(a, p)| is_collapsed(a, threshold) || is_collapsed(p, threshold))
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Fraction of items whose content equals at least one other item's.
pub fn exact_collision_rate(seqs: &[TokenSequence]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::Empty("no sequences".into()));
    }
    let mut groups: HashMap<Vec<TokenId>, usize> = HashMap::new();
    for s in seqs {
        *groups.entry(s.content()).or_default() += 1;
    }
    let colliding: usize = groups.values().filter(|&&n| n > 1).sum();
    Ok(colliding as f64 / seqs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqcore::Alphabet;

    fn s(t: &[u32]) -> TokenSequence {
        TokenSequence::new(t.to_vec(), Alphabet::with_size(16).unwrap()).unwrap()
    }

    #[test]
    fn identical_pairs() {
        let pairs = vec![(s(&[1, 2, 3]), s(&[1, 2, 3])), (s(&[4]), s(&[4]))];
        let r = consistency_report(&pairs).unwrap();
        assert_eq!((r.mean_jaccard, r.mean_similarity, r.exact_match_rate), (1.0, 1.0, 1.0));
        assert_eq!(r.mean_substitutions + r.mean_insertions + r.mean_deletions, 0.0);
        assert_eq!(r.mean_length, 2.0);
    }

    #[test]
    fn single_substitution_pair() {
        let r = consistency_report(&[(s(&[1, 2, 3]), s(&[1, 2, 4]))]).unwrap();
        assert!((r.mean_similarity - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.exact_match_rate, 0.0);
        assert_eq!(r.mean_substitutions, 1.0);
        assert_eq!(r.mean_jaccard, 0.5);
    }

    #[test]
    fn half_exact() {
        let pairs = vec![(s(&[1]), s(&[1])), (s(&[1]), s(&[2]))];
        assert_eq!(consistency_report(&pairs).unwrap().exact_match_rate, 0.5);
        assert!(consistency_report(&[]).is_err());
    }

    #[test]
    fn low_diversity_examples() {
        let ten = s(&[7; 10]);
        assert_eq!(unique_ratio(&ten), Some(0.1));
        assert_eq!(low_diversity_rate(&[ten.clone()], 0.2).rate, 1.0);
        assert_eq!(low_diversity_rate(&[s(&[1, 2, 3])], 0.2).rate, 0.0);
        let all = low_diversity_rate(&[s(&[1, 2, 3]), ten, s(&[])], 1.0);
        assert_eq!((all.rate, all.considered, all.excluded_empty), (1.0, 2, 1));
    }

    #[test]
    fn collapsed_pairs() {
        let ok = s(&[1, 2, 3]);
        let bad = s(&[5; 10]);
        let none = vec![(ok.clone(), ok.clone()); 3];
        assert_eq!(collapsed_pair_rate(&none, 0.2).unwrap(), 0.0);
        let anchors = vec![(bad.clone(), ok.clone()); 3];
        assert_eq!(collapsed_pair_rate(&anchors, 0.2).unwrap(), 1.0);
        let mut one = vec![(ok.clone(), ok.clone()); 3];
        one.push((ok, bad));
        assert_eq!(collapsed_pair_rate(&one, 0.2).unwrap(), 0.25);
    }

    #[test]
    fn collisions() {
        assert_eq!(exact_collision_rate(&[s(&[1]), s(&[2]), s(&[3])]).unwrap(), 0.0);
        let four = [s(&[1, 2]), s(&[1, 2]), s(&[3]), s(&[4])];
        assert_eq!(exact_collision_rate(&four).unwrap(), 0.5);
        assert_eq!(exact_collision_rate(&[s(&[9]), s(&[9]), s(&[9])]).unwrap(), 1.0);
    }
}
