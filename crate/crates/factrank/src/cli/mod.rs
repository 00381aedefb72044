//! The `factrank` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Result;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "factrank", version, about = "Retrieve and rerank fact-checking articles for claims")]
pub struct Cli {
    /// Directory for outputs and the run manifest. Relative `--out` paths
    /// resolve against it.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// TOML configuration file. Flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub claims: PathBuf,
    #[arg(long)]
    pub articles: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
}

/// Flag overrides for the model configuration.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub k1: Option<usize>,
    #[arg(long)]
    pub k2: Option<usize>,
    /// Number of memory patterns (K).
    #[arg(long)]
    pub patterns: Option<usize>,
    #[arg(long)]
    pub lambda_m: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub arp_layers: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Cap on ROT pretraining pairs.
    #[arg(long)]
    pub pretrain_pairs: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_batch_size: Option<usize>,
    #[arg(long)]
    pub min_freq: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus with planted quotation and pattern sentences.
    GenSynthetic {
        #[arg(long)]
        seed: u64,
        #[arg(long = "claims")]
        n_claims: usize,
        #[arg(long = "articles")]
        n_articles: usize,
        /// Also write train/test files with the first N claims held out.
        #[arg(long)]
        holdout: Option<usize>,
    },
    /// Build a word vocabulary from claims and articles.
    BuildVocab {
        #[arg(long)]
        claims: PathBuf,
        #[arg(long)]
        articles: PathBuf,
        #[arg(long)]
        min_freq: Option<u64>,
        #[arg(long, default_value = "vocab.txt")]
        out: PathBuf,
    },
    /// Build the BM25 index of an article collection.
    Index {
        #[arg(long)]
        articles: PathBuf,
        #[arg(long, default_value = "index.bin")]
        out: PathBuf,
    },
    /// Stage-one BM25 candidates for each claim, in results format.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        claims: PathBuf,
        #[arg(long)]
        k1: Option<usize>,
        #[arg(long, default_value = "candidates.jsonl")]
        out: PathBuf,
    },
    /// Pretrain the encoder to regress ROUGE-2 of claim/sentence pairs.
    PretrainRot {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = "rot.ckpt")]
        out: PathBuf,
    },
    /// Train the reranker (pretraining first unless `--rot` is given).
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Checkpoint from `pretrain-rot`.
        #[arg(long)]
        rot: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
        #[arg(long, default_value = "training-log.json")]
        log: PathBuf,
    },
    /// Rerank stage-one candidates with a trained model.
    Rerank {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        claims: PathBuf,
        #[arg(long)]
        articles: PathBuf,
        /// Built from the articles when omitted.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, default_value = "results.jsonl")]
        out: PathBuf,
    },
    /// MRR, MAP@k and HIT@k of a results file.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        k: Vec<usize>,
        #[arg(long, default_value = "eval.json")]
        out: PathBuf,
    },
    /// List the key sentences nearest to each memory pattern in the kept epoch.
    InspectMemory {
        #[arg(long)]
        model: PathBuf,
        /// Training log written by `train`.
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        articles: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long, default_value = "memory.txt")]
        out: PathBuf,
    },
    /// Train and evaluate one ablated variant.
    Ablate {
        /// One of no-rouge, rand-mem-init, no-mem-update, no-pmb, avg-pool, no-pattern-aggr.
        #[arg(long)]
        variant: String,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        eval_claims: PathBuf,
        #[arg(long)]
        eval_labels: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        rot: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenSynthetic { .. } => "gen-synthetic",
            Command::BuildVocab { .. } => "build-vocab",
            Command::Index { .. } => "index",
            Command::Retrieve { .. } => "retrieve",
            Command::PretrainRot { .. } => "pretrain-rot",
            Command::Train { .. } => "train",
            Command::Rerank { .. } => "rerank",
            Command::Eval { .. } => "eval",
            Command::InspectMemory { .. } => "inspect-memory",
            Command::Ablate { .. } => "ablate",
        }
    }
}

pub(crate) fn resolve(out_dir: &Path, p: &Path) -> PathBuf {
    out_dir.join(p)
}

pub fn run(cli: Cli) -> Result<()> {
    commands::dispatch(cli)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
