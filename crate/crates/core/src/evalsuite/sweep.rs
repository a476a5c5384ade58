use std::collections::BTreeMap;

use serde::Serialize;

use super::{mean, median};
use crate::error::{Error, Result};
use crate::seqcore::{edit_script, edit_similarity, jaccard_unigram, TokenSequence};

pub const DEFAULT_SWEEP_THRESHOLDS: [usize; 7] = [0, 1, 2, 3, 5, 10, 20];

/// Comparison of window `index` with window `index + 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPair {
    pub index: usize,
    pub similarity: f64,
    pub jaccard: f64,
    pub len_a: usize,
    pub len_b: usize,
    pub abs_length_change: usize,
    pub edit_distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    /// Operation counts divided by the longer of the two lengths.
    pub sub_rate: f64,
    pub ins_rate: f64,
    pub del_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Summary {
        let m = mean(xs);
        let var = if xs.is_empty() {
            0.0
        } else {
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
        };
        Summary {
            mean: m,
            median: median(xs),
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub windows: usize,
    pub mean_length: f64,
    pub similarity: Summary,
    pub jaccard: Summary,
    pub abs_length_change: Summary,
    pub edit_distance: Summary,
    pub substitutions: Summary,
    pub insertions: Summary,
    pub deletions: Summary,
    pub sub_rate: Summary,
    pub ins_rate: Summary,
    pub del_rate: Summary,
    /// Fraction of adjacent pairs with `|dL| <= threshold`.
    pub length_change_within: BTreeMap<usize, f64>,
    /// Fraction of adjacent pairs with edit distance `<= threshold`.
    pub edit_distance_within: BTreeMap<usize, f64>,
    pub pairs: Vec<SweepPair>,
}

pub fn sweep_report(
    windows: &[TokenSequence],
    dl_thresholds: &[usize],
    ed_thresholds: &[usize],
) -> Result<SweepReport> {
    if windows.len() < 2 {
        return Err(Error::Empty(format!("sweep needs >= 2 windows, got {}", windows.len())));
    }
    let pairs = windows
        .windows(2)
        .enumerate()
        .map(|(index, w)| {
            let (a, b) = (&w[0], &w[1]);
            let script = edit_script(a, b)?;
            let (len_a, len_b) = (a.content_len(), b.content_len());
            let longest = len_a.max(len_b);
            let rate = |n: usize| if longest == 0 { 0.0 } else { n as f64 / longest as f64 };
            Ok(SweepPair {
                index,
                similarity: edit_similarity(a, b)?,
                jaccard: jaccard_unigram(a, b)?,
                len_a,
                len_b,
                abs_length_change: len_a.abs_diff(len_b),
                edit_distance: script.total(),
                substitutions: script.substitutions,
                insertions: script.insertions,
                deletions: script.deletions,
                sub_rate: rate(script.substitutions),
                ins_rate: rate(script.insertions),
                del_rate: rate(script.deletions),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let col = |f: &dyn Fn(&SweepPair) -> f64| Summary::of(&pairs.iter().map(f).collect::<Vec<_>>());
    let within = |thresholds: &[usize], f: &dyn Fn(&SweepPair) -> usize| -> BTreeMap<usize, f64> {
        thresholds
            .iter()
            .map(|&t| {
                let n = pairs.iter().filter(|p| f(p) <= t).count();
                (t, n as f64 / pairs.len() as f64)
            })
            .collect()
    };
    let lengths: Vec<f64> = windows.iter().map(|w| w.content_len() as f64).collect();
    Ok(SweepReport {
        windows: windows.len(),
        mean_length: mean(&lengths),
        similarity: col(&|p| p.similarity),
        jaccard: col(&|p| p.jaccard),
        abs_length_change: col(&|p| p.abs_length_change as f64),
        edit_distance: col(&|p| p.edit_distance as f64),
        substitutions: col(&|p| p.substitutions as f64),
        insertions: col(&|p| p.insertions as f64),
        deletions: col(&|p| p.deletions as f64),
        sub_rate: col(&|p| p.sub_rate),
        ins_rate: col(&|p| p.ins_rate),
        del_rate: col(&|p| p.del_rate),
        length_change_within: within(dl_thresholds, &|p| p.abs_length_change),
        edit_distance_within: within(ed_thresholds, &|p| p.edit_distance),
        pairs,
    })
}
