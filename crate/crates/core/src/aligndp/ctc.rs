use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seqcore::TokenSequence;

/// Log-probability of `target` under frame posteriors with no-blank CTC.
///
/// Sums over every monotone frame-to-label path that stays on a label or
/// advances by one, whose collapse (adjacent-repeat removal) equals the
/// target. Returns `-inf` when no such path exists (target longer than the
/// frame count, or an empty target against a nonempty frame sequence).
///
/// Targets must already be deduplicated: an adjacent repeat can never be
/// produced by the collapse map, so it is reported as a precondition error.
pub fn ctc_noblank_logprob(target: &TokenSequence, posteriors: &Matrix) -> Result<f64> {
    let labels = target.content();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Precondition(
            "no-blank CTC target has adjacent repeats; deduplicate first".into(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= posteriors.cols()) {
        return Err(Error::Dimension(format!(
            "label {bad} outside posterior width {}",
            posteriors.cols()
        )));
    }
    let frames = posteriors.rows();
    let n = labels.len();
    if n == 0 {
        return Ok(if frames == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    if n > frames {
        return Ok(f64::NEG_INFINITY);
    }

    let emit = |t: usize, s: usize| posteriors.get(t, labels[s] as usize).ln();
    let mut alpha = vec![f64::NEG_INFINITY; n];
    alpha[0] = emit(0, 0);
    for t in 1..frames {
        // States a path can occupy at frame t while still able to finish.
        let lo = (n + t).saturating_sub(frames);
        let hi = t.min(n - 1);
        for s in (lo..=hi).rev() {
            let stay = alpha[s];
            let advance = if s > 0 { alpha[s - 1] } else { f64::NEG_INFINITY };
            alpha[s] = log_add(stay, advance) + emit(t, s);
        }
        if lo > 0 {
            alpha[lo - 1] = f64::NEG_INFINITY;
        }
    }
    Ok(alpha[n - 1])
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}
