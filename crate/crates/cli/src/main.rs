//! Command-line front end: training, evaluation, querying and corpus tools.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use char2subword::embedder::EmbedMode;
use char2subword::noise::NoiseOp;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "char2subword", version, about = "Train and query a character-level stand-in for a subword embedding table")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each overrides the matching config key.
#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration (must declare `version = 1`)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Vocabulary file, one entry per line in id order
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    /// Embedding table (text `v d` header + rows, or binary EMBT)
    #[arg(long, global = true)]
    table: Option<PathBuf>,
    /// Keyboard layouts as JSON, replacing the built-in QWERTY map
    #[arg(long, global = true)]
    layouts: Option<PathBuf>,
    /// Input checkpoint
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output path; stdout when omitted for report-style commands
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Embedding mode: table_only, full or hybrid
    #[arg(long, global = true)]
    mode: Option<EmbedMode>,
    /// Precision depth for `eval`, result count for `neighbors`
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Text corpus, one sentence per line
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Run every inner loop on one thread
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    accumulation_steps: Option<usize>,
    /// Global gradient-norm ceiling
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Metrics log (JSON lines); defaults to `<out>.metrics.jsonl`
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Append wall-clock seconds to each metrics record
    #[arg(long)]
    wall_time: bool,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    /// Probability of editing each eligible token
    #[arg(long)]
    p_noise: Option<f64>,
    /// Comma-separated ops to enable
    #[arg(long, value_delimiter = ',')]
    ops: Option<Vec<NoiseOp>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the module to reproduce the table rows from characters
    Simulate {
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long)]
        w_cos: Option<f64>,
        #[arg(long)]
        w_ce: Option<f64>,
        #[arg(long)]
        w_l2: Option<f64>,
        #[arg(long)]
        w_nbr: Option<f64>,
    },
    /// Character-level masked-token pre-training on a corpus
    Pretrain {
        #[command(flatten)]
        train: TrainArgs,
        /// Token selection probability
        #[arg(long)]
        mask_prob: Option<f64>,
    },
    /// Accuracy and precision@1..k over the vocabulary
    Eval {
        /// Score the table itself instead of a checkpoint
        #[arg(long)]
        oracle_table: bool,
    },
    /// Nearest vocabulary entries to the embedding of QUERY
    Neighbors {
        query: String,
        /// Treat QUERY as a whole word
        #[arg(long)]
        full_word: bool,
        /// Look QUERY up in the table instead of running a checkpoint
        #[arg(long)]
        oracle_table: bool,
    },
    /// Write a noised copy of --corpus to --out and print per-op counts
    Noise {
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Subword sequence-length statistics of --corpus
    Stats,
    /// Embed a sentence, or every line of --corpus
    Embed {
        #[arg(long)]
        sentence: Option<String>,
    },
    /// Attention maps of every layer and head for INPUT
    Attn {
        input: String,
        #[arg(long)]
        full_word: bool,
    },
    /// Parameter count of the module against the table it replaces
    Params {
        /// Table rows when no --table is given
        #[arg(long)]
        table_rows: Option<usize>,
        /// Table width when no --table is given
        #[arg(long)]
        table_dim: Option<usize>,
        /// Character alphabet size when neither --checkpoint nor --vocab is given
        #[arg(long)]
        alphabet_size: Option<usize>,
    },
}

fn merge(common: &Common, cfg: &mut RunConfig) {
    let p = &mut cfg.paths;
    for (flag, slot) in [
        (&common.vocab, &mut p.vocab),
        (&common.table, &mut p.table),
        (&common.layouts, &mut p.layouts),
        (&common.checkpoint, &mut p.checkpoint),
        (&common.out, &mut p.out),
        (&common.corpus, &mut p.corpus),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    cfg.seed = common.seed.or(cfg.seed);
    cfg.eval.mode = common.mode.or(cfg.eval.mode);
    cfg.eval.k = common.k.or(cfg.eval.k);
    if common.sequential {
        cfg.train.sequential = Some(true);
    }
}

fn merge_train(args: &TrainArgs, cfg: &mut RunConfig) {
    let t = &mut cfg.train;
    t.epochs = args.epochs.or(t.epochs);
    t.lr = args.lr.or(t.lr);
    t.batch_size = args.batch_size.or(t.batch_size);
    t.accumulation_steps = args.accumulation_steps.or(t.accumulation_steps);
    t.grad_clip = args.grad_clip.or(t.grad_clip);
    if args.wall_time {
        t.record_wall_time = Some(true);
    }
    if args.metrics.is_some() {
        cfg.paths.metrics.clone_from(&args.metrics);
    }
}

fn merge_noise(args: &NoiseArgs, cfg: &mut RunConfig) {
    cfg.noise.p_noise = args.p_noise.or(cfg.noise.p_noise);
    if args.ops.is_some() {
        cfg.noise.ops.clone_from(&args.ops);
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig {
            version: Some(config::CONFIG_VERSION),
            ..RunConfig::default()
        },
    };
    merge(&cli.common, &mut cfg);
    match cli.command {
        Command::Simulate {
            train,
            noise,
            w_cos,
            w_ce,
            w_l2,
            w_nbr,
        } => {
            merge_train(&train, &mut cfg);
            merge_noise(&noise, &mut cfg);
            let mut w = cfg.train.weights.clone().unwrap_or_default();
            w.cos = w_cos.unwrap_or(w.cos);
            w.ce = w_ce.unwrap_or(w.ce);
            w.l2 = w_l2.unwrap_or(w.l2);
            w.nbr = w_nbr.unwrap_or(w.nbr);
            cfg.train.weights = Some(w);
            commands::simulate(&cfg)
        }
        Command::Pretrain { train, mask_prob } => {
            merge_train(&train, &mut cfg);
            cfg.train.mask_prob = mask_prob.or(cfg.train.mask_prob);
            commands::pretrain(&cfg)
        }
        Command::Eval { oracle_table } => commands::eval(&cfg, oracle_table),
        Command::Neighbors {
            query,
            full_word,
            oracle_table,
        } => commands::neighbors(&cfg, &query, full_word, oracle_table),
        Command::Noise { noise } => {
            merge_noise(&noise, &mut cfg);
            commands::noise(&cfg)
        }
        Command::Stats => commands::stats(&cfg),
        Command::Embed { sentence } => commands::embed(&cfg, sentence.as_deref()),
        Command::Attn { input, full_word } => commands::attn(&cfg, &input, full_word),
        Command::Params {
            table_rows,
            table_dim,
            alphabet_size,
        } => commands::params(&cfg, table_rows, table_dim, alphabet_size),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
