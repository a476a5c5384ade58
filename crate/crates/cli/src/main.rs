mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pairalign::config::RunConfig;
use pairalign::Error;

use crate::io::Ctx;

#[derive(Parser, Debug)]
#[command(name = "pairalign", version, about = "Batch workflows over discrete audio token sequences")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON run configuration; omitted sections take their defaults
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel stages
    #[arg(long, global = true, env = "PAIRALIGN_THREADS", default_value_t = 1)]
    threads: usize,

    /// Output directory, created when missing
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assign nearest-centroid tokens to PAF1 feature files
    Tokenize(TokenizeArgs),
    /// Consistency, collapse and inventory statistics over anchor/positive pairs
    Eval(EvalArgs),
    /// Build a versioned token archive from a segment listing
    BuildArchive(BuildArchiveArgs),
    /// Rank archive entries by normalized edit distance to each query
    Retrieve(RetrieveArgs),
    /// Compare tokenizations of adjacent windows in a sweep
    Sweep(SweepArgs),
    /// Recover token time intervals from cross-attention
    Timing(TimingArgs),
    /// Generate token sequences from a scripted logit provider
    Decode(DecodeArgs),
}

#[derive(Args, Debug)]
pub struct TokenizeArgs {
    /// A PAF1 feature file or a directory of `.paf` files
    pub features: PathBuf,
    /// Codebook centroid file (PAF1) with its JSON sidecar
    #[arg(long, value_name = "PATH")]
    pub codebook: PathBuf,
    /// Collapse runs of repeated tokens
    #[arg(long)]
    pub dedup: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// CSV with `anchor,positive` columns naming token files, relative to the manifest
    pub manifest: PathBuf,
}

#[derive(Args, Debug)]
pub struct BuildArchiveArgs {
    /// CSV with `segment_id,source_id,start_s,end_s,tokens[,phonemes]` columns
    pub segments: PathBuf,
    /// Tokenizer name stored in the archive header
    #[arg(long, default_value = "unnamed")]
    pub tokenizer: String,
    /// Archive of the same segments under another tokenizer, for compression ratios
    #[arg(long, value_name = "PATH")]
    pub baseline: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RelevanceArg {
    SegmentOverlap,
    PhonemeExact,
    PhonemeRelaxed,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    /// Archive written by `build-archive`
    #[arg(long, value_name = "PATH")]
    pub archive: PathBuf,
    /// CSV with `query_id,tokens[,segment_id]` columns
    #[arg(long, value_name = "PATH")]
    pub queries: PathBuf,
    /// Keep only the best N entries per query in the ranking file
    #[arg(long, value_name = "N")]
    pub top: Option<usize>,
    /// Relevance criterion used when every query names its source segment
    #[arg(long, value_enum, default_value_t = RelevanceArg::SegmentOverlap)]
    pub relevance: RelevanceArg,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// JSON array of token arrays, one per window in sweep order
    pub windows: PathBuf,
}

#[derive(Args, Debug)]
pub struct TimingArgs {
    /// Attention manifest listing one PAF1 file per head
    #[arg(long, value_name = "PATH", conflicts_with = "matrix", required_unless_present = "matrix")]
    pub attention: Option<PathBuf>,
    /// Already sliced token-by-frame attention matrix (PAF1)
    #[arg(long, value_name = "PATH")]
    pub matrix: Option<PathBuf>,
    /// Token file: the full decoded sequence with `--attention`, content ids with `--matrix`
    #[arg(long, value_name = "PATH")]
    pub tokens: PathBuf,
    /// JSON array of booleans selecting valid encoder frames
    #[arg(long, value_name = "PATH", requires = "attention")]
    pub enc_mask: Option<PathBuf>,
    /// Window start in seconds
    #[arg(long, default_value_t = 0.0)]
    pub win_start: f64,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Scripted provider table (JSON)
    #[arg(long, value_name = "PATH")]
    pub provider: PathBuf,
    /// Condition handle; repeat for a batch
    #[arg(long = "condition", default_value = "")]
    pub conditions: Vec<String>,
    /// Encoder length used for the length cap
    #[arg(long, default_value_t = 0)]
    pub t_cond: usize,
    /// Beam search instead of scheduled top-p sampling
    #[arg(long)]
    pub beam: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Infeasible(_) => 4,
        _ => 3,
    }
}

fn run(cli: Cli) -> pairalign::Result<()> {
    let GlobalArgs {
        config,
        seed,
        threads,
        out,
    } = cli.global;
    let mut cfg = match &config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if threads == 0 {
        return Err(Error::Config("--threads must be >= 1".into()));
    }
    let ctx = Ctx::new(cfg, config.is_some(), threads, out)?;
    log::info!("seed {} config {}", ctx.config.seed, ctx.config_hash);
    match cli.command {
        Command::Tokenize(a) => commands::tokenize(&ctx, &a),
        Command::Eval(a) => commands::eval(&ctx, &a),
        Command::BuildArchive(a) => commands::build_archive(&ctx, &a),
        Command::Retrieve(a) => commands::retrieve(&ctx, &a),
        Command::Sweep(a) => commands::sweep(&ctx, &a),
        Command::Timing(a) => commands::timing(&ctx, &a),
        Command::Decode(a) => commands::decode(&ctx, &a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
