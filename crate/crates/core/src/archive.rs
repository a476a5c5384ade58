//! Token archives: window planning, JSONL persistence and exhaustive
//! edit-distance ranking.
//!
//! On disk an archive is UTF-8 text with LF line endings. Line 1 is a JSON
//! header; every further line is one JSON entry. The header records the
//! SHA-256 of the entry lines (each including its trailing LF) so truncation
//! and tampering are detected on load.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seqcore::{edit_similarity, Alphabet, TokenId, TokenSequence};

pub const ARCHIVE_SCHEMA: &str = "pairalign-archive/1";
pub const WINDOW_TOLERANCE_S: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveHeader {
    pub schema: String,
    pub alphabet: Alphabet,
    pub window_s: f64,
    pub hop_s: f64,
    pub tokenizer: String,
    pub count: usize,
    pub entries_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub segment_id: String,
    pub source_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub tokens: TokenSequence,
    pub phonemes: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryRecord {
    segment_id: String,
    source_id: String,
    start_s: f64,
    end_s: f64,
    tokens: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phonemes: Option<Vec<String>>,
}

impl From<&ArchiveEntry> for EntryRecord {
    fn from(e: &ArchiveEntry) -> Self {
        EntryRecord {
            segment_id: e.segment_id.clone(),
            source_id: e.source_id.clone(),
            start_s: e.start_s,
            end_s: e.end_s,
            tokens: e.tokens.tokens().to_vec(),
            phonemes: e.phonemes.clone(),
        }
    }
}

/// Immutable, validated archive.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenArchive {
    alphabet: Alphabet,
    window_s: f64,
    hop_s: f64,
    tokenizer: String,
    entries: Vec<ArchiveEntry>,
}

impl TokenArchive {
    /// Sorts entries by `(source_id, start_s)` and validates them.
    pub fn new(
        alphabet: Alphabet,
        window_s: f64,
        hop_s: f64,
        tokenizer: impl Into<String>,
        mut entries: Vec<ArchiveEntry>,
    ) -> Result<Self> {
        entries.sort_by(|a, b| {
            a.source_id
                .cmp(&b.source_id)
                .then(a.start_s.total_cmp(&b.start_s))
        });
        let archive = TokenArchive {
            alphabet,
            window_s,
            hop_s,
            tokenizer: tokenizer.into(),
            entries,
        };
        archive.validate()?;
        Ok(archive)
    }

    fn validate(&self) -> Result<()> {
        self.alphabet.validate()?;
        if !(self.window_s > 0.0 && self.hop_s > 0.0) {
            return Err(Error::Validation("window and hop must be > 0".into()));
        }
        let mut ids = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if !ids.insert(e.segment_id.as_str()) {
                return Err(Error::Validation(format!("duplicate segment id {:?}", e.segment_id)));
            }
            if e.tokens.alphabet() != &self.alphabet {
                return Err(Error::AlphabetMismatch(format!("entry {:?}", e.segment_id)));
            }
            if let Some(&bad) = e.tokens.tokens().iter().find(|&&t| !self.alphabet.is_content(t)) {
                return Err(Error::Validation(format!(
                    "entry {:?}: token {bad} is not a content id below K = {}",
                    e.segment_id, self.alphabet.size
                )));
            }
            let span = e.end_s - e.start_s;
            if !((span - self.window_s).abs() <= WINDOW_TOLERANCE_S) || !(e.start_s >= 0.0) {
                return Err(Error::Validation(format!(
                    "entry {i} ({:?}) spans {span} s, window is {} s",
                    e.segment_id, self.window_s
                )));
            }
        }
        if self
            .entries
            .windows(2)
            .any(|w| (w[0].source_id.as_str(), w[0].start_s) > (w[1].source_id.as_str(), w[1].start_s))
        {
            return Err(Error::Validation("entries not sorted by (source, start)".into()));
        }
        Ok(())
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn window_s(&self) -> f64 {
        self.window_s
    }

    pub fn hop_s(&self) -> f64 {
        self.hop_s
    }

    pub fn tokenizer(&self) -> &str {
        &self.tokenizer
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, segment_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.segment_id == segment_id)
    }

    fn entry_lines(&self) -> Result<String> {
        let mut body = String::new();
        for e in &self.entries {
            body.push_str(&serde_json::to_string(&EntryRecord::from(e))?);
            body.push('\n');
        }
        Ok(body)
    }

    pub fn header(&self) -> Result<ArchiveHeader> {
        Ok(self.header_for(&self.entry_lines()?))
    }

    fn header_for(&self, body: &str) -> ArchiveHeader {
        ArchiveHeader {
            schema: ARCHIVE_SCHEMA.into(),
            alphabet: self.alphabet,
            window_s: self.window_s,
            hop_s: self.hop_s,
            tokenizer: self.tokenizer.clone(),
            count: self.entries.len(),
            entries_sha256: hex::encode(Sha256::digest(body.as_bytes())),
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let body = self.entry_lines()?;
        let header = self.header_for(&body);
        Ok(format!("{}\n{body}", serde_json::to_string(&header)?))
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.split_inclusive('\n');
        let first = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let header: ArchiveHeader = serde_json::from_str(first.trim_end_matches('\n')).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.schema != ARCHIVE_SCHEMA {
            return Err(Error::Version(format!(
                "archive schema {:?}, expected {ARCHIVE_SCHEMA:?}",
                header.schema
            )));
        }
        let mut hasher = Sha256::new();
        let mut entries = Vec::with_capacity(header.count);
        for (i, raw) in lines.enumerate() {
            let line = i + 2;
            if !raw.ends_with('\n') {
                return Err(Error::Parse {
                    line,
                    message: "line is not LF-terminated (truncated file?)".into(),
                });
            }
            hasher.update(raw.as_bytes());
            let rec: EntryRecord = serde_json::from_str(&raw[..raw.len() - 1]).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            let tokens = TokenSequence::new(rec.tokens, header.alphabet).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            entries.push(ArchiveEntry {
                segment_id: rec.segment_id,
                source_id: rec.source_id,
                start_s: rec.start_s,
                end_s: rec.end_s,
                tokens,
                phonemes: rec.phonemes,
            });
        }
        if entries.len() != header.count {
            return Err(Error::Parse {
                line: entries.len() + 2,
                message: format!("header announces {} entries, found {}", header.count, entries.len()),
            });
        }
        let found = hex::encode(hasher.finalize());
        if found != header.entries_sha256 {
            return Err(Error::Checksum {
                expected: header.entries_sha256,
                found,
            });
        }
        let archive = TokenArchive {
            alphabet: header.alphabet,
            window_s: header.window_s,
            hop_s: header.hop_s,
            tokenizer: header.tokenizer,
            entries,
        };
        archive.validate()?;
        Ok(archive)
    }
}

pub fn save_archive(archive: &TokenArchive, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, archive.to_jsonl()?).map_err(|e| Error::io(path, e))
}

pub fn load_archive(path: impl AsRef<Path>) -> Result<TokenArchive> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TokenArchive::from_jsonl(&text)
}

/// Window starts `m * hop` for every window that fits inside its source
/// (with a microsecond of slack). A source shorter than one window still
/// gets a single window at 0.
pub fn window_plan(
    durations: &BTreeMap<String, f64>,
    window_s: f64,
    hop_s: f64,
) -> Result<Vec<(String, f64)>> {
    if !(window_s > 0.0 && hop_s > 0.0) {
        return Err(Error::InvalidArgument("window and hop must be > 0".into()));
    }
    let mut plan = Vec::new();
    for (source, &duration) in durations {
        let mut m = 0u64;
        loop {
            let start = m as f64 * hop_s;
            if m > 0 && start + window_s > duration + WINDOW_TOLERANCE_S {
                break;
            }
            plan.push((source.clone(), start));
            m += 1;
        }
    }
    Ok(plan)
}

/// Normalized edit distance `1 - edit_similarity`.
pub fn normalized_distance(a: &TokenSequence, b: &TokenSequence) -> Result<f64> {
    Ok(1.0 - edit_similarity(a, b)?)
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn rank_in(pool: &rayon::ThreadPool, query: &TokenSequence, archive: &TokenArchive) -> Result<Vec<(usize, f64)>> {
    if query.alphabet() != archive.alphabet() {
        return Err(Error::AlphabetMismatch(
            "query and archive use different alphabets".into(),
        ));
    }
    let mut ranked: Vec<(usize, f64)> = pool.install(|| {
        archive
            .entries()
            .par_iter()
            .enumerate()
            .map(|(i, e)| normalized_distance(query, &e.tokens).map(|d| (i, d)))
            .collect::<Result<Vec<_>>>()
    })?;
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Every archive index ordered by ascending normalized edit distance, ties
/// by ascending index. The result does not depend on `parallelism`.
pub fn rank_query(query: &TokenSequence, archive: &TokenArchive, parallelism: usize) -> Result<Vec<(usize, f64)>> {
    rank_in(&pool(parallelism)?, query, archive)
}

pub fn rank_queries(
    queries: &[TokenSequence],
    archive: &TokenArchive,
    parallelism: usize,
) -> Result<Vec<Vec<(usize, f64)>>> {
    let pool = pool(parallelism)?;
    queries.iter().map(|q| rank_in(&pool, q, archive)).collect()
}
