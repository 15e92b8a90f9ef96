use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use char2subword::embedder::{embed_sequence, write_embeddings, EmbedMode};
use char2subword::evaluation::{
    dump_attention, neighbor_query, precision_at_k, seq_length_stats, TableLookup, TokenEmbedder,
    DEFAULT_K_MAX,
};
use char2subword::model::{param_count, table_param_count};
use char2subword::noise::{sample_noisy_traced, NoiseConfig, NoiseOp};
use char2subword::training::{
    encode_corpus, metrics_to_jsonl, pretrain_mlm, train_simulation, TrainConfig,
};
use char2subword::{Char2Subword, CharAlphabet, EmbeddingTable, NeighborIndex, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{self, OutputLock};

const DEFAULT_NEIGHBORS: usize = 10;

fn alphabet(vocab: &Vocabulary, noise: &NoiseConfig) -> CharAlphabet {
    CharAlphabet::from_vocabulary_with(vocab, noise.symbols())
}

/// The input checkpoint, or a fresh module seeded from the run seed.
fn starting_model(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    noise: &NoiseConfig,
    train: &TrainConfig,
) -> Result<Char2Subword, CliError> {
    match io::checkpoint(cfg)? {
        Some(m) => Ok(m),
        None => {
            let model_cfg = cfg.model.build(table.dim());
            Char2Subword::new(model_cfg, alphabet(vocab, noise), train.seed)
                .map_err(|e| CliError::usage("model", e))
        }
    }
}

struct Artifacts {
    out: PathBuf,
    metrics: PathBuf,
    _locks: [OutputLock; 2],
}

fn artifacts(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let out = cfg
        .paths
        .out
        .clone()
        .ok_or_else(|| CliError::usage("config", "no output checkpoint path given (--out)"))?;
    let metrics = cfg.paths.metrics.clone().unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".metrics.jsonl");
        p.into()
    });
    let locks = [OutputLock::acquire(&out)?, OutputLock::acquire(&metrics)?];
    Ok(Artifacts {
        out,
        metrics,
        _locks: locks,
    })
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let (vocab, table) = io::vocab_and_table(cfg)?;
    let noise = io::noise(cfg)?;
    let train = cfg.train(noise.clone())?;
    let model = starting_model(cfg, &vocab, &table, &noise, &train)?;
    let files = artifacts(cfg)?;
    let (trained, log) =
        train_simulation(&model, &vocab, &table, &train).map_err(|e| CliError::training("simulate", e))?;
    io::write_file(&files.out, &io::checkpoint_bytes(&trained)?)?;
    io::write_file(&files.metrics, metrics_to_jsonl(&log).as_bytes())?;
    if let Some(last) = log.last() {
        println!(
            "epoch {} loss {} accuracy {} prec@1 {} avg_precision {}",
            last.epoch, last.loss.total, last.accuracy, last.prec_at_1, last.avg_precision
        );
    }
    Ok(())
}

pub fn pretrain(cfg: &RunConfig) -> Result<(), CliError> {
    let (vocab, table) = io::vocab_and_table(cfg)?;
    let noise = io::noise(cfg)?;
    let train = cfg.train(noise.clone())?;
    let corpus = encode_corpus(&io::corpus(cfg)?, &vocab);
    let model = starting_model(cfg, &vocab, &table, &noise, &train)?;
    let files = artifacts(cfg)?;
    let (trained, log) =
        pretrain_mlm(&model, &corpus, &vocab, &table, &train).map_err(|e| CliError::training("pretrain", e))?;
    io::write_file(&files.out, &io::checkpoint_bytes(&trained)?)?;
    io::write_file(&files.metrics, metrics_to_jsonl(&log).as_bytes())?;
    if let Some(last) = log.last() {
        println!("epoch {} selected {} loss {}", last.epoch, last.selected, last.loss);
    }
    Ok(())
}

enum Source<'a> {
    Oracle(TableLookup<'a>),
    Model(Char2Subword),
}

impl Source<'_> {
    fn embedder(&self) -> &dyn TokenEmbedder {
        match self {
            Source::Oracle(t) => t,
            Source::Model(m) => m,
        }
    }
}

fn source<'a>(
    cfg: &RunConfig,
    oracle: bool,
    vocab: &'a Vocabulary,
    table: &'a EmbeddingTable,
) -> Result<Source<'a>, CliError> {
    if oracle {
        return Ok(Source::Oracle(TableLookup { vocab, table }));
    }
    let m = io::required_checkpoint(cfg)?;
    if m.config().d_out != table.dim() {
        return Err(CliError::usage(
            "checkpoint",
            format!("model output width {} does not match table width {}", m.config().d_out, table.dim()),
        ));
    }
    Ok(Source::Model(m))
}

pub fn eval(cfg: &RunConfig, oracle: bool) -> Result<(), CliError> {
    let (vocab, table) = io::vocab_and_table(cfg)?;
    let k = cfg.eval.k.unwrap_or(DEFAULT_K_MAX);
    if k == 0 || k > table.rows() {
        return Err(CliError::usage(
            "eval",
            format!("k must lie in 1..={}, got {k}", table.rows()),
        ));
    }
    let exec = cfg.exec();
    let source = source(cfg, oracle, &vocab, &table)?;
    let index = NeighborIndex::build(&table, k, exec).map_err(|e| CliError::usage("eval", e))?;
    let report =
        precision_at_k(source.embedder(), &vocab, &table, &index, k, exec).map_err(|e| CliError::usage("eval", e))?;
    if !report.avg_precision.is_finite() || !report.accuracy.is_finite() {
        return Err(CliError::numeric("eval", "non-finite metric"));
    }
    io::emit(cfg, &report.to_text())
}

pub fn neighbors(cfg: &RunConfig, query: &str, full_word: bool, oracle: bool) -> Result<(), CliError> {
    let (vocab, table) = io::vocab_and_table(cfg)?;
    let n = cfg.eval.k.unwrap_or(DEFAULT_NEIGHBORS);
    let source = source(cfg, oracle, &vocab, &table)?;
    let hits = neighbor_query(source.embedder(), &vocab, &table, query, full_word, n)
        .map_err(|e| CliError::usage("neighbors", e))?;
    let mut text = String::new();
    for (rank, (token, cos)) in hits.iter().enumerate() {
        if !cos.is_finite() {
            return Err(CliError::numeric("neighbors", format!("non-finite cosine for {token}")));
        }
        writeln!(text, "{}\t{token}\t{cos}", rank + 1).unwrap();
    }
    io::emit(cfg, &text)
}

/// Noises each maximal non-whitespace run and copies whitespace through
/// byte for byte.
pub fn noise_text(text: &str, noise: &NoiseConfig, seed: u64) -> (String, usize, BTreeMap<NoiseOp, usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts: BTreeMap<NoiseOp, usize> = NoiseOp::ALL.iter().map(|&op| (op, 0)).collect();
    let mut words = 0;
    let mut out = String::with_capacity(text.len() + text.len() / 8);
    let mut rest = text;
    while !rest.is_empty() {
        let ws = rest.find(|c: char| !c.is_whitespace()).unwrap_or(rest.len());
        out.push_str(&rest[..ws]);
        rest = &rest[ws..];
        if rest.is_empty() {
            break;
        }
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let (noisy, op) = sample_noisy_traced(&rest[..end], &mut rng, noise);
        words += 1;
        if let Some(op) = op {
            *counts.get_mut(&op).unwrap() += 1;
        }
        out.push_str(&noisy);
        rest = &rest[end..];
    }
    (out, words, counts)
}

pub fn noise(cfg: &RunConfig) -> Result<(), CliError> {
    let noise = io::noise(cfg)?;
    let seed = cfg.seed()?;
    let text = io::corpus(cfg)?;
    let out = cfg
        .paths
        .out
        .as_deref()
        .ok_or_else(|| CliError::usage("config", "no output corpus path given (--out)"))?;
    let _lock = OutputLock::acquire(out)?;
    let (noisy, words, counts) = noise_text(&text, &noise, seed);
    io::write_file(out, noisy.as_bytes())?;
    let edited: usize = counts.values().sum();
    let mut report = format!("words {words}\nedited {edited}\n");
    for (op, n) in &counts {
        writeln!(report, "{op} {n}").unwrap();
    }
    print!("{report}");
    Ok(())
}

pub fn stats(cfg: &RunConfig) -> Result<(), CliError> {
    let vocab = io::vocab(cfg)?;
    let text = io::corpus(cfg)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    io::emit(cfg, &seq_length_stats(&lines, &vocab).to_text())
}

pub fn embed(cfg: &RunConfig, sentence: Option<&str>) -> Result<(), CliError> {
    let (vocab, table) = io::vocab_and_table(cfg)?;
    let mode = cfg.eval.mode.unwrap_or(EmbedMode::Hybrid);
    let model = match mode {
        EmbedMode::TableOnly => io::checkpoint(cfg)?,
        _ => Some(io::required_checkpoint(cfg)?),
    };
    let text;
    let sentences: Vec<&str> = match sentence {
        Some(s) => vec![s],
        None => {
            text = io::corpus(cfg)?;
            text.lines().collect()
        }
    };
    let outputs = sentences
        .iter()
        .map(|s| embed_sequence(mode, s, &vocab, &table, model.as_ref()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::usage("embed", e))?;
    if outputs.iter().flat_map(|o| &o.vectors).flatten().any(|x| !x.is_finite()) {
        return Err(CliError::numeric("embed", "non-finite embedding"));
    }
    io::emit(cfg, &write_embeddings(&outputs, mode, table.dim()))
}

pub fn attn(cfg: &RunConfig, input: &str, full_word: bool) -> Result<(), CliError> {
    let model = io::required_checkpoint(cfg)?;
    let text = dump_attention(&model, input, full_word).map_err(|e| CliError::usage("attn", e))?;
    io::emit(cfg, &text)
}

pub fn params(
    cfg: &RunConfig,
    table_rows: Option<usize>,
    table_dim: Option<usize>,
    alphabet_size: Option<usize>,
) -> Result<(), CliError> {
    let (rows, dim) = match (&cfg.paths.table, table_rows, table_dim) {
        (_, Some(r), Some(d)) => (r, d),
        (Some(_), _, _) => {
            let t = io::table(cfg)?;
            (t.rows(), t.dim())
        }
        _ => {
            return Err(CliError::usage(
                "params",
                "give --table or both --table-rows and --table-dim",
            ))
        }
    };
    let (model_cfg, alpha) = match io::checkpoint(cfg)? {
        Some(m) => (m.config().clone(), m.alphabet.size()),
        None => {
            let alpha = match (&cfg.paths.vocab, alphabet_size) {
                (_, Some(a)) => a,
                (Some(_), None) => alphabet(&io::vocab(cfg)?, &io::noise(cfg)?).size(),
                (None, None) => {
                    return Err(CliError::usage(
                        "params",
                        "give --checkpoint, --vocab or --alphabet-size",
                    ))
                }
            };
            (cfg.model.build(dim), alpha)
        }
    };
    model_cfg.validate().map_err(|e| CliError::usage("params", e))?;
    let module = param_count(&model_cfg, alpha);
    let table = table_param_count(rows, dim);
    let mut text = String::new();
    writeln!(text, "alphabet {alpha}").unwrap();
    writeln!(text, "layers {}", model_cfg.n_layers).unwrap();
    writeln!(text, "char2subword_params {module}").unwrap();
    writeln!(text, "table {rows}x{dim}").unwrap();
    writeln!(text, "table_params {table}").unwrap();
    writeln!(text, "ratio {}", module as f64 / table as f64).unwrap();
    io::emit(cfg, &text)
}
