//! Autoregressive generation over an abstract next-token logit source:
//! repetition-penalized top-p sampling with an early/late schedule, and
//! deterministic beam search.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{log_softmax, softmax};
use crate::objectives::length_cap;
use crate::rng;
use crate::seqcore::{Alphabet, TokenId, TokenSequence};

/// Source of next-token logits. Implementations must be deterministic in
/// `(prefix, condition)` and always return `vocab_size()` finite values.
pub trait LogitProvider {
    fn vocab_size(&self) -> usize;
    fn logits(&self, prefix: &TokenSequence, condition: &str) -> Result<Vec<f64>>;
}

pub const PROVIDER_SCHEMA: &str = "pairalign-provider/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEntry {
    /// Condition this row applies to; absent means any condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    /// Full prefix, BOS included.
    pub prefix: Vec<TokenId>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedTable {
    pub schema: String,
    pub vocab: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Vec<f64>>,
    pub entries: Vec<ScriptedEntry>,
}

/// Lookup-table provider. A prefix with no matching row falls back to the
/// table default, or fails when there is none.
#[derive(Debug, Clone)]
pub struct ScriptedProvider {
    vocab: usize,
    default: Option<Vec<f64>>,
    exact: HashMap<(String, Vec<TokenId>), Vec<f64>>,
    wildcard: HashMap<Vec<TokenId>, Vec<f64>>,
}

impl ScriptedProvider {
    pub fn from_table(table: ScriptedTable) -> Result<Self> {
        if table.schema != PROVIDER_SCHEMA {
            return Err(Error::Version(format!(
                "provider schema {:?}, expected {PROVIDER_SCHEMA:?}",
                table.schema
            )));
        }
        let check = |what: &str, v: &[f64]| -> Result<()> {
            if v.len() != table.vocab {
                return Err(Error::Dimension(format!(
                    "{what}: {} logits for vocab {}",
                    v.len(),
                    table.vocab
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(what.to_string()));
            }
            Ok(())
        };
        if let Some(d) = &table.default {
            check("default row", d)?;
        }
        let mut exact = HashMap::new();
        let mut wildcard = HashMap::new();
        for (i, e) in table.entries.into_iter().enumerate() {
            check(&format!("entry {i}"), &e.logits)?;
            let duplicate = match e.condition {
                Some(c) => exact.insert((c, e.prefix), e.logits).is_some(),
                None => wildcard.insert(e.prefix, e.logits).is_some(),
            };
            if duplicate {
                return Err(Error::Validation(format!("entry {i} repeats an earlier key")));
            }
        }
        Ok(ScriptedProvider {
            vocab: table.vocab,
            default: table.default,
            exact,
            wildcard,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_table(serde_json::from_str(&text)?)
    }
}

impl LogitProvider for ScriptedProvider {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn logits(&self, prefix: &TokenSequence, condition: &str) -> Result<Vec<f64>> {
        let key = prefix.tokens().to_vec();
        self.exact
            .get(&(condition.to_string(), key.clone()))
            .or_else(|| self.wildcard.get(&key))
            .or(self.default.as_ref())
            .cloned()
            .ok_or_else(|| {
                Error::Provider(format!("no logits for prefix {key:?} under {condition:?}"))
            })
    }
}

/// Sign-aware penalty: non-negative logits shrink by `gamma^-freq`, negative
/// ones grow in magnitude by `gamma^freq`.
pub fn repetition_penalty(logits: &[f64], freq: &[u32], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("repetition factor {gamma} must be > 1")));
    }
    if logits.len() != freq.len() {
        return Err(Error::Dimension(format!(
            "{} logits, {} counts",
            logits.len(),
            freq.len()
        )));
    }
    Ok(logits
        .iter()
        .zip(freq)
        .map(|(&l, &f)| {
            if f == 0 {
                l
            } else if l >= 0.0 {
                l * gamma.powi(-(f as i32))
            } else {
                l * gamma.powi(f as i32)
            }
        })
        .collect())
}

/// Indices sorted by descending logit, ties by ascending index.
fn sorted_desc(logits: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
    order
}

/// Keeps the shortest descending-probability prefix whose cumulative mass
/// exceeds `p`, crossing token included. The rest become `-inf`.
pub fn top_p_filter(logits: &[f64], p: f64) -> Vec<f64> {
    let probs = softmax(logits);
    let order = sorted_desc(logits);
    let mut keep = vec![false; logits.len()];
    let mut cum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if rank > 0 && (cum > p || probs[i] == 0.0) {
            break;
        }
        keep[i] = true;
        cum += probs[i];
    }
    logits
        .iter()
        .zip(keep)
        .map(|(&l, k)| if k { l } else { f64::NEG_INFINITY })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSchedule {
    pub k_early: usize,
    pub tau_early: f64,
    pub tau_late: f64,
    pub p_early: f64,
    pub p_late: f64,
    pub gamma_early: f64,
    pub gamma_late: f64,
    /// Count repeats over only the most recent tokens when set.
    #[serde(default)]
    pub freq_window: Option<usize>,
}

impl SamplingSchedule {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("tau_early", self.tau_early), ("tau_late", self.tau_late)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        for (name, p) in [("p_early", self.p_early), ("p_late", self.p_late)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1]")));
            }
        }
        for (name, g) in [("gamma_early", self.gamma_early), ("gamma_late", self.gamma_late)] {
            if !(g > 1.0 && g.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 1")));
            }
        }
        if self.freq_window == Some(0) {
            return Err(Error::Config("freq_window must be >= 1".into()));
        }
        if !(self.tau_early > self.tau_late) {
            warn!("sampling schedule: tau_early <= tau_late");
        }
        if !(self.p_early > self.p_late) {
            warn!("sampling schedule: p_early <= p_late");
        }
        if !(self.gamma_early < self.gamma_late) {
            warn!("sampling schedule: gamma_early >= gamma_late");
        }
        Ok(())
    }

    /// `(tau, p, gamma)` at 1-based generation step `step`.
    pub fn params(&self, step: usize) -> (f64, f64, f64) {
        if step <= self.k_early {
            (self.tau_early, self.p_early, self.gamma_early)
        } else {
            (self.tau_late, self.p_late, self.gamma_late)
        }
    }
}

/// One draw: penalty, nucleus filter, temperature, softmax, inverse CDF over
/// the descending-sorted survivors.
pub fn sample_step(
    logits: &[f64],
    freq: &[u32],
    schedule: &SamplingSchedule,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let (tau, p, gamma) = schedule.params(step);
    let penalized = repetition_penalty(logits, freq, gamma)?;
    let filtered = top_p_filter(&penalized, p);
    let scaled: Vec<f64> = filtered.iter().map(|l| l / tau).collect();
    let q = softmax(&scaled);
    let order = sorted_desc(&filtered);
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = order[0];
    for &i in &order {
        if q[i] == 0.0 {
            break;
        }
        cum += q[i];
        last = i;
        if u < cum {
            return Ok(i);
        }
    }
    Ok(last)
}

/// Per-id repeat counts over content tokens; reserved ids always count zero.
fn frequencies(history: &[TokenId], vocab: usize, alphabet: &Alphabet, window: Option<usize>) -> Vec<u32> {
    let start = window.map_or(0, |w| history.len().saturating_sub(w));
    let mut freq = vec![0u32; vocab];
    for &t in &history[start..] {
        if alphabet.is_content(t) {
            freq[t as usize] += 1;
        }
    }
    freq
}

fn checked_logits(
    provider: &dyn LogitProvider,
    prefix: &TokenSequence,
    condition: &str,
) -> Result<Vec<f64>> {
    let logits = provider.logits(prefix, condition)?;
    if logits.len() != provider.vocab_size() {
        return Err(Error::Provider(format!(
            "provider returned {} logits, declared {}",
            logits.len(),
            provider.vocab_size()
        )));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Provider("provider returned non-finite logits".into()));
    }
    Ok(logits)
}

fn check_vocab(provider: &dyn LogitProvider, alphabet: &Alphabet) -> Result<()> {
    if provider.vocab_size() != alphabet.vocab_size() {
        return Err(Error::AlphabetMismatch(format!(
            "provider vocab {} but alphabet spans {} ids",
            provider.vocab_size(),
            alphabet.vocab_size()
        )));
    }
    Ok(())
}

/// Length-cap inputs shared by both decoders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthLimits {
    pub rho: f64,
    pub l_min: usize,
    pub l_max: usize,
}

impl LengthLimits {
    pub fn cap(&self, t_cond: usize) -> Result<usize> {
        length_cap(t_cond, self.rho, self.l_min, self.l_max)
    }
}

/// Samples `[BOS, y_1, ..., y_n, EOS]` with `n <= L_cap`. BOS, PAD and MASK
/// are never sampled; once `L_cap` content tokens exist EOS is forced.
pub fn generate_topp(
    provider: &dyn LogitProvider,
    alphabet: &Alphabet,
    condition: &str,
    t_cond: usize,
    schedule: &SamplingSchedule,
    limits: LengthLimits,
    seed: u64,
) -> Result<TokenSequence> {
    generate_with_rng(provider, alphabet, condition, t_cond, schedule, limits, &mut rng::substream(seed, 0))
}

/// Batch form: item `i` uses substream `i` of `seed`, so an item's output
/// depends only on its own inputs and position.
pub fn generate_topp_batch(
    provider: &dyn LogitProvider,
    alphabet: &Alphabet,
    items: &[(String, usize)],
    schedule: &SamplingSchedule,
    limits: LengthLimits,
    seed: u64,
) -> Result<Vec<TokenSequence>> {
    items
        .iter()
        .enumerate()
        .map(|(i, (condition, t_cond))| {
            let mut rng = rng::substream(seed, i as u64);
            generate_with_rng(provider, alphabet, condition, *t_cond, schedule, limits, &mut rng)
        })
        .collect()
}

fn generate_with_rng(
    provider: &dyn LogitProvider,
    alphabet: &Alphabet,
    condition: &str,
    t_cond: usize,
    schedule: &SamplingSchedule,
    limits: LengthLimits,
    rng: &mut ChaCha8Rng,
) -> Result<TokenSequence> {
    schedule.validate()?;
    check_vocab(provider, alphabet)?;
    let cap = limits.cap(t_cond)?;
    let mut seq = TokenSequence::new(vec![alphabet.bos], *alphabet)?;
    for step in 1..=cap + 1 {
        let content = step - 1;
        if content >= cap {
            seq.push(alphabet.eos)?;
            break;
        }
        let mut logits = checked_logits(provider, &seq, condition)?;
        for id in [alphabet.bos, alphabet.pad, alphabet.mask] {
            logits[id as usize] = f64::NEG_INFINITY;
        }
        let freq = frequencies(&seq.tokens()[1..], logits.len(), alphabet, schedule.freq_window);
        let next = sample_step(&logits, &freq, schedule, step, rng)? as TokenId;
        seq.push(next)?;
        if next == alphabet.eos {
            break;
        }
    }
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub l_max: usize,
    pub l_min: usize,
    pub rho: f64,
    pub gamma_rep: f64,
    #[serde(default)]
    pub alpha_len: f64,
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be >= 1".into()));
        }
        if !(self.gamma_rep > 1.0 && self.gamma_rep.is_finite()) {
            return Err(Error::Config("gamma_rep must be > 1".into()));
        }
        if !(self.alpha_len >= 0.0 && self.alpha_len.is_finite()) {
            return Err(Error::Config("alpha_len must be >= 0".into()));
        }
        self.limits().cap(0).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn limits(&self) -> LengthLimits {
        LengthLimits {
            rho: self.rho,
            l_min: self.l_min,
            l_max: self.l_max,
        }
    }
}

#[derive(Debug, Clone)]
struct Beam {
    tokens: Vec<TokenId>,
    score: f64,
    finished: bool,
}

impl Beam {
    /// Generated tokens that count toward length normalization: content and EOS.
    fn length(&self, alphabet: &Alphabet) -> usize {
        self.tokens[1..].iter().filter(|&&t| t != alphabet.pad).count()
    }

    fn rank_key(&self, alphabet: &Alphabet, alpha_len: f64) -> f64 {
        if alpha_len == 0.0 {
            return self.score;
        }
        let len = self.length(alphabet).max(1) as f64;
        self.score / len.powf(alpha_len)
    }
}

/// Deterministic beam search. The result is `[BOS, content..., EOS]` padded
/// with PAD to `1 + L_max` ids.
///
/// Scores accumulate raw log-probabilities; with `alpha_len > 0` candidates
/// are ranked by score over generated length to the `alpha_len`.
pub fn beam_search(
    provider: &dyn LogitProvider,
    alphabet: &Alphabet,
    condition: &str,
    t_cond: usize,
    cfg: &BeamConfig,
) -> Result<TokenSequence> {
    cfg.validate()?;
    check_vocab(provider, alphabet)?;
    let cap = cfg.limits().cap(t_cond)?;
    let vocab = provider.vocab_size();
    let mut beams = vec![Beam {
        tokens: vec![alphabet.bos],
        score: 0.0,
        finished: false,
    }];

    // Content is at most `cap`, so every beam has finished after cap + 1 steps.
    for step in 1..=cap + 1 {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let mut candidates: Vec<(f64, usize, TokenId, Beam)> = Vec::new();
        for (k, beam) in beams.iter().enumerate() {
            let mut push = |token: TokenId, logprob: f64| {
                if logprob == f64::NEG_INFINITY {
                    return;
                }
                let mut tokens = beam.tokens.clone();
                tokens.push(token);
                let next = Beam {
                    tokens,
                    score: beam.score + logprob,
                    finished: beam.finished || token == alphabet.eos,
                };
                candidates.push((next.rank_key(alphabet, cfg.alpha_len), k, token, next));
            };
            if beam.finished {
                push(alphabet.pad, 0.0);
                continue;
            }
            if step - 1 >= cap {
                push(alphabet.eos, 0.0);
                continue;
            }
            let prefix = TokenSequence::new(beam.tokens.clone(), *alphabet)?;
            let raw = checked_logits(provider, &prefix, condition)?;
            let freq = frequencies(&beam.tokens, vocab, alphabet, None);
            let mut adjusted = repetition_penalty(&raw, &freq, cfg.gamma_rep)?;
            for id in [alphabet.bos, alphabet.pad, alphabet.mask] {
                adjusted[id as usize] = f64::NEG_INFINITY;
            }
            for (v, lp) in log_softmax(&adjusted).into_iter().enumerate() {
                push(v as TokenId, lp);
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        candidates.truncate(cfg.beam_size);
        beams = candidates.into_iter().map(|c| c.3).collect();
    }

    let best = beams
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| {
            a.rank_key(alphabet, cfg.alpha_len)
                .total_cmp(&b.rank_key(alphabet, cfg.alpha_len))
                .then(j.cmp(i))
        })
        .map(|(_, b)| b)
        .ok_or_else(|| Error::Infeasible("beam search produced no hypothesis".into()))?;
    let mut tokens = best.tokens.clone();
    tokens.resize(1 + cfg.l_max, alphabet.pad);
    TokenSequence::new(tokens, *alphabet)
}
