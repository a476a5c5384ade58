use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use pairalign::aligndp::{
    apply_beta_prior, frame_to_token_posterior, monotone_viterbi, slice_attention, token_timestamps, AttentionMatrix,
};
use pairalign::aligndp::timing::load_attention;
use pairalign::archive::{load_archive, rank_queries, save_archive, ArchiveEntry, TokenArchive};
use pairalign::decode::{beam_search, generate_topp_batch, LogitProvider, ScriptedProvider};
use pairalign::evalsuite::{
    collapsed_pair_rate, compactness_from_totals, consistency_report, exact_collision_rate, inventory,
    low_diversity_rate, relevance_sets, retrieval_metrics, sweep_report, token_rate, RelevanceMode,
};
use pairalign::quantizer::{assign_tokens, dedup, Codebook};
use pairalign::{paf, Alphabet, Error, Result, TokenId, TokenSequence};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::io::{at_path, io_err, read_csv, read_json, read_tokens, relative_to, without, Ctx};
use crate::{BuildArchiveArgs, DecodeArgs, EvalArgs, RelevanceArg, RetrieveArgs, SweepArgs, TimingArgs, TokenizeArgs};

/// Alphabet implied by an artifact with `size` content symbols. An
/// explicitly configured alphabet must agree with it.
fn alphabet_for(ctx: &Ctx, size: usize, what: &str) -> Result<Alphabet> {
    if ctx.explicit_config {
        if ctx.config.alphabet.size as usize != size {
            return Err(Error::Config(format!(
                "configured alphabet has {} symbols, {what} has {size}",
                ctx.config.alphabet.size
            )));
        }
        return Ok(ctx.config.alphabet);
    }
    let size = u32::try_from(size).map_err(|_| Error::Config(format!("{what} is too large")))?;
    Alphabet::with_size(size).map_err(|e| Error::Config(e.to_string()))
}

fn feature_files(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(input).map_err(|e| io_err(input, e))? {
        let path = entry.map_err(|e| io_err(input, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "paf") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Serialize)]
struct TokenizedFile {
    input: String,
    output: String,
    frames: usize,
    tokens: usize,
}

pub fn tokenize(ctx: &Ctx, args: &TokenizeArgs) -> Result<()> {
    let codebook = Codebook::load(&args.codebook)
        .map_err(|e| Error::Config(format!("codebook {}: {e}", args.codebook.display())))?;
    let alphabet = alphabet_for(ctx, codebook.size(), "codebook")?;
    let mut files = Vec::new();
    for path in feature_files(&args.features)? {
        let z = paf::load(&path).map_err(|e| at_path(&path, e))?;
        let raw = assign_tokens(&z, &codebook, &alphabet).map_err(|e| at_path(&path, e))?;
        let seq = if args.dedup { dedup(&raw) } else { raw };
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        let name = format!("{stem}.json");
        ctx.write_text(&name, &format!("{}\n", serde_json::to_string(seq.tokens())?))?;
        files.push(TokenizedFile {
            input: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            output: name,
            frames: z.rows(),
            tokens: seq.len(),
        });
    }
    let total: usize = files.iter().map(|f| f.tokens).sum();
    let headline = json!({ "files": files.len(), "tokens": total, "dedup": args.dedup });
    let body = json!({ "codebook_size": codebook.size(), "dedup": args.dedup, "files": files });
    ctx.publish("tokenize", body, headline)
}

#[derive(Deserialize)]
struct ManifestRow {
    anchor: PathBuf,
    positive: PathBuf,
}

pub fn eval(ctx: &Ctx, args: &EvalArgs) -> Result<()> {
    let alphabet = ctx.config.alphabet;
    let rows: Vec<ManifestRow> = read_csv(&args.manifest)?;
    let pairs = rows
        .iter()
        .map(|r| {
            let a = read_tokens(&relative_to(&args.manifest, &r.anchor), &alphabet)?;
            let p = read_tokens(&relative_to(&args.manifest, &r.positive), &alphabet)?;
            Ok((a, p))
        })
        .collect::<Result<Vec<_>>>()?;
    let ev = &ctx.config.eval;
    let consistency = consistency_report(&pairs)?;
    let all: Vec<TokenSequence> = pairs.iter().flat_map(|(a, p)| [a.clone(), p.clone()]).collect();
    let low = low_diversity_rate(&all, ev.collapse_threshold);
    let collapsed = collapsed_pair_rate(&pairs, ev.collapse_threshold)?;
    let anchors: Vec<TokenSequence> = pairs.iter().map(|(a, _)| a.clone()).collect();
    let collisions = exact_collision_rate(&anchors)?;
    let inv = match inventory(&all, &alphabet, ev.position_bins, &ev.top_q) {
        Ok(r) => Some(r),
        Err(Error::Empty(msg)) => {
            log::warn!("inventory skipped: {msg}");
            None
        }
        Err(e) => return Err(e),
    };

    ctx.write_csv("eval_pairs.csv", &consistency.rows)?;
    if let Some(r) = &inv {
        ctx.write_csv("eval_positions.csv", &r.positions)?;
        ctx.write_csv("eval_bins.csv", &r.relative_bins)?;
    }
    let headline = json!({
        "pairs": consistency.pairs,
        "exact_match_rate": consistency.exact_match_rate,
        "mean_similarity": consistency.mean_similarity,
        "mean_jaccard": consistency.mean_jaccard,
        "collapsed_pair_rate": collapsed,
    });
    let body = json!({
        "consistency": without(serde_json::to_value(&consistency)?, &["rows"]),
        "collapse": {
            "threshold": ev.collapse_threshold,
            "collapsed_pair_rate": collapsed,
            "low_diversity": low,
            "anchor_collision_rate": collisions,
        },
        "inventory": inv.map(|r| without(serde_json::to_value(r).unwrap_or(Value::Null), &["positions", "relative_bins"])),
    });
    ctx.publish("eval", body, headline)
}

#[derive(Deserialize)]
struct SegmentRow {
    segment_id: String,
    source_id: String,
    start_s: f64,
    end_s: f64,
    tokens: PathBuf,
    /// Space-separated phoneme labels.
    #[serde(default)]
    phonemes: Option<String>,
}

pub fn build_archive(ctx: &Ctx, args: &BuildArchiveArgs) -> Result<()> {
    let alphabet = ctx.config.alphabet;
    let rows: Vec<SegmentRow> = read_csv(&args.segments)?;
    let entries = rows
        .into_iter()
        .map(|r| {
            Ok(ArchiveEntry {
                tokens: read_tokens(&relative_to(&args.segments, &r.tokens), &alphabet)?,
                segment_id: r.segment_id,
                source_id: r.source_id,
                start_s: r.start_s,
                end_s: r.end_s,
                phonemes: r.phonemes.map(|p| p.split_whitespace().map(String::from).collect()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = &ctx.config.archive;
    let archive = TokenArchive::new(alphabet, cfg.window_s, cfg.hop_s, args.tokenizer.as_str(), entries)
        .map_err(|e| at_path(&args.segments, e))?;
    let path = ctx.path("archive.jsonl");
    save_archive(&archive, &path)?;

    let tokens: usize = archive.entries().iter().map(|e| e.tokens.content_len()).sum();
    let baseline_tokens = match &args.baseline {
        None => None,
        Some(p) => {
            let base = load_archive(p)?;
            if base.len() != archive.len() {
                return Err(Error::Validation(format!(
                    "baseline has {} segments, archive has {}",
                    base.len(),
                    archive.len()
                )));
            }
            Some(base.entries().iter().map(|e| e.tokens.content_len()).sum())
        }
    };
    let compact = if archive.is_empty() {
        None
    } else {
        Some(compactness_from_totals(
            archive.len(),
            tokens,
            cfg.window_s,
            alphabet.size as usize,
            baseline_tokens,
        )?)
    };
    let header = archive.header()?;
    let headline = json!({ "entries": archive.len(), "tokens": tokens, "sha256": header.entries_sha256 });
    let body = json!({
        "archive": "archive.jsonl",
        "header": header,
        "compactness": compact,
        "compactness_table": compact.as_ref().map(|c| c.table()),
    });
    ctx.publish("build-archive", body, headline)
}

#[derive(Deserialize)]
struct QueryRow {
    query_id: String,
    tokens: PathBuf,
    /// Archive segment the query was cut from, used for relevance.
    #[serde(default)]
    segment_id: Option<String>,
}

#[derive(Serialize)]
struct RankRow<'a> {
    query_id: &'a str,
    rank: usize,
    segment_id: &'a str,
    distance: f64,
}

pub fn retrieve(ctx: &Ctx, args: &RetrieveArgs) -> Result<()> {
    let archive = load_archive(&args.archive)?;
    let rows: Vec<QueryRow> = read_csv(&args.queries)?;
    let queries = rows
        .iter()
        .map(|r| read_tokens(&relative_to(&args.queries, &r.tokens), archive.alphabet()))
        .collect::<Result<Vec<_>>>()?;
    let rankings = rank_queries(&queries, &archive, ctx.threads)?;

    let mut csv_rows = Vec::new();
    for (q, ranking) in rows.iter().zip(&rankings) {
        let keep = args.top.unwrap_or(ranking.len());
        for (rank, &(idx, distance)) in ranking.iter().take(keep).enumerate() {
            csv_rows.push(RankRow {
                query_id: &q.query_id,
                rank: rank + 1,
                segment_id: &archive.entries()[idx].segment_id,
                distance,
            });
        }
    }
    ctx.write_csv("rankings.csv", &csv_rows)?;

    let sources: Option<Vec<&str>> = rows.iter().map(|r| r.segment_id.as_deref()).collect();
    let ev = &ctx.config.eval;
    let metrics = match sources {
        Some(ids) if !ids.is_empty() => {
            let mode = match args.relevance {
                RelevanceArg::SegmentOverlap => RelevanceMode::SegmentOverlap {
                    threshold: ev.overlap_threshold,
                },
                RelevanceArg::PhonemeExact => RelevanceMode::PhonemeExact,
                RelevanceArg::PhonemeRelaxed => RelevanceMode::PhonemeRelaxed {
                    threshold: ev.relaxed_threshold,
                },
            };
            let relevance: Vec<BTreeSet<usize>> = relevance_sets(&archive, &ids, mode)?;
            let order: Vec<Vec<usize>> = rankings.iter().map(|r| r.iter().map(|&(i, _)| i).collect()).collect();
            Some((mode, retrieval_metrics(&order, &relevance, &ev.recall_k, archive.len())?))
        }
        _ => None,
    };
    if let Some((_, report)) = &metrics {
        ctx.write_csv("retrieval_queries.csv", &report.rows)?;
    }
    let headline = match &metrics {
        Some((_, r)) => json!({ "queries": rows.len(), "recall_at": r.recall_at, "mrr": r.mrr }),
        None => json!({ "queries": rows.len() }),
    };
    let body = json!({
        "archive_entries": archive.len(),
        "archive_sha256": archive.header()?.entries_sha256,
        "rankings": "rankings.csv",
        "relevance": metrics.as_ref().map(|(m, _)| m),
        "retrieval": metrics.map(|(_, r)| without(serde_json::to_value(r).unwrap_or(Value::Null), &["rows"])),
    });
    ctx.publish("retrieve", body, headline)
}

pub fn sweep(ctx: &Ctx, args: &SweepArgs) -> Result<()> {
    let alphabet = ctx.config.alphabet;
    let raw: Vec<Vec<TokenId>> = read_json(&args.windows)?;
    let windows = raw
        .into_iter()
        .map(|ids| TokenSequence::new(ids, alphabet))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| at_path(&args.windows, e))?;
    let ev = &ctx.config.eval;
    let report = sweep_report(&windows, &ev.dl_thresholds, &ev.ed_thresholds)?;
    let tokens_per_second = token_rate(report.mean_length, ctx.config.archive.window_s)?;
    ctx.write_csv("sweep_pairs.csv", &report.pairs)?;
    let headline = json!({
        "windows": report.windows,
        "mean_similarity": report.similarity.mean,
        "mean_edit_distance": report.edit_distance.mean,
        "tokens_per_second": tokens_per_second,
    });
    let body = json!({
        "window_s": ctx.config.archive.window_s,
        "tokens_per_second": tokens_per_second,
        "sweep": without(serde_json::to_value(&report)?, &["pairs"]),
    });
    ctx.publish("sweep", body, headline)
}

#[derive(Serialize)]
struct IntervalRow {
    index: usize,
    token_id: TokenId,
    start_s: f64,
    end_s: f64,
}

pub fn timing(ctx: &Ctx, args: &TimingArgs) -> Result<()> {
    let alphabet = ctx.config.alphabet;
    let tokens = read_tokens(&args.tokens, &alphabet)?;
    let attention = match (&args.attention, &args.matrix) {
        (Some(manifest), _) => {
            let (_, tensor) = load_attention(manifest).map_err(|e| at_path(manifest, e))?;
            let mask = match &args.enc_mask {
                Some(p) => read_json::<Vec<bool>>(p)?,
                None => vec![true; tensor.shape().2],
            };
            slice_attention(&tensor, &tokens, &mask)?
        }
        (None, Some(matrix)) => {
            AttentionMatrix::new(paf::load(matrix).map_err(|e| at_path(matrix, e))?)
                .map_err(|e| at_path(matrix, e))?
        }
        (None, None) => return Err(Error::Config("one of --attention or --matrix is required".into())),
    };
    let t = &ctx.config.timing;
    let smoothed = apply_beta_prior(&attention, t.prior_a, t.prior_b, t.prior_strength, t.epsilon)?;
    let posterior = frame_to_token_posterior(&smoothed, t.epsilon);
    let path = monotone_viterbi(&posterior, t.epsilon)?;
    let intervals = token_timestamps(&path, &tokens, args.win_start, t.frame_dt_s)?;
    let rows: Vec<IntervalRow> = intervals
        .iter()
        .enumerate()
        .map(|(index, iv)| IntervalRow {
            index,
            token_id: iv.token_id,
            start_s: iv.start_s,
            end_s: iv.end_s,
        })
        .collect();
    ctx.write_csv("timing.csv", &rows)?;
    let headline = json!({
        "tokens": path.tokens(),
        "frames": path.frames(),
        "start_s": args.win_start,
        "end_s": intervals.last().map(|iv| iv.end_s),
    });
    let body = json!({
        "frames": path.frames(),
        "tokens": path.tokens(),
        "frame_dt_s": t.frame_dt_s,
        "win_start_s": args.win_start,
        "path": path.states(),
        "log_score": path.score(&posterior, t.epsilon),
        "intervals": intervals,
    });
    ctx.publish("timing", body, headline)
}

pub fn decode(ctx: &Ctx, args: &DecodeArgs) -> Result<()> {
    let provider = ScriptedProvider::load(&args.provider).map_err(|e| at_path(&args.provider, e))?;
    let content = provider
        .vocab_size()
        .checked_sub(4)
        .ok_or_else(|| Error::Validation("provider vocabulary is smaller than the reserved ids".into()))?;
    let alphabet = alphabet_for(ctx, content, "provider")?;
    let cfg = &ctx.config;
    let (mode, outputs) = if args.beam {
        let seqs = args
            .conditions
            .iter()
            .map(|c| beam_search(&provider, &alphabet, c, args.t_cond, &cfg.beam))
            .collect::<Result<Vec<_>>>()?;
        ("beam", seqs)
    } else {
        let items: Vec<(String, usize)> = args.conditions.iter().map(|c| (c.clone(), args.t_cond)).collect();
        let seqs = generate_topp_batch(&provider, &alphabet, &items, &cfg.sampling, cfg.generation, cfg.seed)?;
        ("top_p", seqs)
    };
    let results: Vec<Value> = args
        .conditions
        .iter()
        .zip(&outputs)
        .map(|(c, s)| json!({ "condition": c, "t_cond": args.t_cond, "tokens": s.tokens(), "content": s.content() }))
        .collect();
    let headline = json!({ "mode": mode, "sequences": results.len() });
    let body = json!({ "mode": mode, "vocab": provider.vocab_size(), "outputs": results });
    ctx.publish("decode", body, headline)
}
