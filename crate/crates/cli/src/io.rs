//! File helpers shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use pairalign::config::RunConfig;
use pairalign::evalsuite::EVAL_SCHEMA;
use pairalign::{Alphabet, Error, Result, TokenId, TokenSequence};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

pub struct Ctx {
    pub config: RunConfig,
    /// True when the configuration came from a file rather than defaults.
    pub explicit_config: bool,
    pub config_hash: String,
    pub threads: usize,
    pub out: PathBuf,
    started: SystemTime,
}

pub fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Prefixes data errors with the offending path. Errors of other exit
/// classes pass through unchanged.
pub fn at_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Io { .. } | Error::Config(_) | Error::Infeasible(_) => e,
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.position() {
        Some(pos) => Error::Parse {
            line: pos.line() as usize,
            message: format!("{}: {e}", path.display()),
        },
        None => Error::Format(format!("{}: {e}", path.display())),
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| at_path(path, e.into()))
}

/// A token file is a JSON array of ids.
pub fn read_tokens(path: &Path, alphabet: &Alphabet) -> Result<TokenSequence> {
    let ids: Vec<TokenId> = read_json(path)?;
    TokenSequence::new(ids, *alphabet).map_err(|e| at_path(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| csv_err(path, e))
}

/// Resolves `file` against the directory holding `listing`.
pub fn relative_to(listing: &Path, file: &Path) -> PathBuf {
    listing.parent().unwrap_or_else(|| Path::new(".")).join(file)
}

fn unix_seconds(t: SystemTime) -> f64 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl Ctx {
    pub fn new(config: RunConfig, explicit_config: bool, threads: usize, out: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
        Ok(Ctx {
            config_hash: config.hash(),
            config,
            explicit_config,
            threads,
            out,
            started: SystemTime::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        for row in rows {
            w.serialize(row).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    /// Writes `<command>.json` with the provenance envelope merged into
    /// `body`, a `<command>.run.json` sidecar with wall-clock details, and
    /// prints `headline` as one JSON line on stdout.
    pub fn publish(&self, command: &str, body: Value, headline: Value) -> Result<()> {
        let mut report = Map::new();
        report.insert("schema".into(), json!(EVAL_SCHEMA));
        report.insert("command".into(), json!(command));
        report.insert("config_hash".into(), json!(self.config_hash));
        report.insert("seed".into(), json!(self.config.seed));
        if let Value::Object(fields) = body {
            report.extend(fields);
        }
        self.write_json(&format!("{command}.json"), &report)?;

        let sidecar = json!({
            "command": command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "threads": self.threads,
            "started_unix_s": unix_seconds(self.started),
            "finished_unix_s": unix_seconds(SystemTime::now()),
        });
        self.write_json(&format!("{command}.run.json"), &sidecar)?;
        println!("{headline}");
        Ok(())
    }
}

/// Drops the named keys from a serialized object.
pub fn without(mut value: Value, keys: &[&str]) -> Value {
    if let Value::Object(map) = &mut value {
        for k in keys {
            map.remove(*k);
        }
    }
    value
}
