//! Token-sequence types and pairwise sequence comparison.
//!
//! Every metric operates on the *content view* of a sequence: BOS, EOS, PAD
//! and MASK ids are stripped before comparison, so decoder output can be
//! passed in as-is.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// A finite token alphabet: content ids `0..size` plus four reserved ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alphabet {
    pub size: u32,
    pub bos: TokenId,
    pub eos: TokenId,
    pub pad: TokenId,
    pub mask: TokenId,
}

impl Alphabet {
    pub fn new(size: u32, bos: TokenId, eos: TokenId, pad: TokenId, mask: TokenId) -> Result<Self> {
        let alphabet = Alphabet {
            size,
            bos,
            eos,
            pad,
            mask,
        };
        alphabet.validate()?;
        Ok(alphabet)
    }

    /// Alphabet of `size` content tokens with BOS, EOS, PAD, MASK at
    /// `size`, `size + 1`, `size + 2`, `size + 3`.
    pub fn with_size(size: u32) -> Result<Self> {
        let base = size
            .checked_add(3)
            .ok_or_else(|| Error::Config(format!("alphabet size {size} too large")))?;
        Self::new(size, base - 3, base - 2, base - 1, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::Config("alphabet size must be >= 1".into()));
        }
        let reserved = self.reserved();
        for (i, &a) in reserved.iter().enumerate() {
            if a < self.size {
                return Err(Error::Config(format!(
                    "reserved id {a} collides with content range 0..{}",
                    self.size
                )));
            }
            if reserved[i + 1..].contains(&a) {
                return Err(Error::Config(format!("reserved id {a} used twice")));
            }
        }
        Ok(())
    }

    pub fn reserved(&self) -> [TokenId; 4] {
        [self.bos, self.eos, self.pad, self.mask]
    }

    pub fn is_reserved(&self, id: TokenId) -> bool {
        id == self.bos || id == self.eos || id == self.pad || id == self.mask
    }

    pub fn is_content(&self, id: TokenId) -> bool {
        id < self.size
    }

    pub fn is_valid(&self, id: TokenId) -> bool {
        self.is_content(id) || self.is_reserved(id)
    }

    /// Number of logit slots needed to address every id, content and reserved.
    pub fn vocab_size(&self) -> usize {
        let max_reserved = self.reserved().into_iter().max().unwrap_or(0);
        (max_reserved.max(self.size - 1) as usize) + 1
    }
}

/// An ordered list of token ids tagged with its alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<TokenId>,
    alphabet: Alphabet,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>, alphabet: Alphabet) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| !alphabet.is_valid(t)) {
            return Err(Error::Validation(format!(
                "token id {bad} is neither content (< {}) nor reserved",
                alphabet.size
            )));
        }
        Ok(TokenSequence { tokens, alphabet })
    }

    pub fn empty(alphabet: Alphabet) -> Self {
        TokenSequence {
            tokens: Vec::new(),
            alphabet,
        }
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    /// Raw ids, reserved ones included.
    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<TokenId> {
        self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn content_iter(&self) -> impl Iterator<Item = TokenId> + '_ {
        let alphabet = self.alphabet;
        self.tokens
            .iter()
            .copied()
            .filter(move |&t| alphabet.is_content(t))
    }

    /// The sequence with BOS/EOS/PAD/MASK removed.
    pub fn content(&self) -> Vec<TokenId> {
        self.content_iter().collect()
    }

    pub fn content_len(&self) -> usize {
        self.content_iter().count()
    }

    pub fn push(&mut self, id: TokenId) -> Result<()> {
        if !self.alphabet.is_valid(id) {
            return Err(Error::Validation(format!("token id {id} not in alphabet")));
        }
        self.tokens.push(id);
        Ok(())
    }
}

/// Substitution, insertion and deletion counts of one optimal alignment,
/// read as the edits that turn the first sequence into the second.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EditScript {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditScript {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

fn check_alphabets(a: &TokenSequence, b: &TokenSequence) -> Result<()> {
    if a.alphabet != b.alphabet {
        return Err(Error::AlphabetMismatch(format!(
            "{:?} vs {:?}",
            a.alphabet, b.alphabet
        )));
    }
    Ok(())
}

/// Levenshtein distance with unit costs, two-row formulation.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let best = (diag + usize::from(x != y))
                .min(row[j] + 1)
                .min(row[j + 1] + 1);
            diag = row[j + 1];
            row[j + 1] = best;
        }
    }
    row[b.len()]
}

/// Operation counts from the canonical backtrace of the full DP table.
///
/// Ties during backtrace resolve as match > substitution > deletion >
/// insertion, so the counts are a deterministic function of the inputs.
pub fn edit_ops<T: PartialEq>(a: &[T], b: &[T]) -> EditScript {
    let n = a.len();
    let m = b.len();
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        dp[j] = j;
    }
    for i in 1..=n {
        dp[i * w] = i;
        for j in 1..=m {
            let sub = dp[(i - 1) * w + j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let del = dp[(i - 1) * w + j] + 1;
            let ins = dp[i * w + j - 1] + 1;
            dp[i * w + j] = sub.min(del).min(ins);
        }
    }

    let mut script = EditScript::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let diag = dp[(i - 1) * w + j - 1];
            if a[i - 1] == b[j - 1] && diag == here {
                i -= 1;
                j -= 1;
                continue;
            }
            if diag + 1 == here {
                script.substitutions += 1;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[(i - 1) * w + j] + 1 == here {
            script.deletions += 1;
            i -= 1;
        } else {
            script.insertions += 1;
            j -= 1;
        }
    }
    script
}

/// `1 - ED / max(|a|, |b|)`, with two empty inputs scoring 1.
pub fn normalized_similarity<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

/// Unigram-set Jaccard overlap, with two empty inputs scoring 1.
pub fn unigram_jaccard<T: Eq + Hash>(a: &[T], b: &[T]) -> f64 {
    let sa: HashSet<&T> = a.iter().collect();
    let sb: HashSet<&T> = b.iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

pub fn edit_distance(a: &TokenSequence, b: &TokenSequence) -> Result<usize> {
    check_alphabets(a, b)?;
    Ok(levenshtein(&a.content(), &b.content()))
}

pub fn edit_script(a: &TokenSequence, b: &TokenSequence) -> Result<EditScript> {
    check_alphabets(a, b)?;
    Ok(edit_ops(&a.content(), &b.content()))
}

pub fn edit_similarity(a: &TokenSequence, b: &TokenSequence) -> Result<f64> {
    check_alphabets(a, b)?;
    Ok(normalized_similarity(&a.content(), &b.content()))
}

pub fn jaccard_unigram(a: &TokenSequence, b: &TokenSequence) -> Result<f64> {
    check_alphabets(a, b)?;
    Ok(unigram_jaccard(&a.content(), &b.content()))
}

pub fn exact_match(a: &TokenSequence, b: &TokenSequence) -> Result<bool> {
    check_alphabets(a, b)?;
    Ok(a.content_iter().eq(b.content_iter()))
}
