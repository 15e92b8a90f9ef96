//! Accuracy, neighbor precision, neighbor queries, sequence-length statistics
//! and attention dumps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::model::{forward, Char2Subword, ModelError};
use crate::numerics::dot;
use crate::objectives::{EmbeddingTable, NeighborIndex, ObjectiveError};
use crate::vocab::{whitespace_split, Vocabulary};

pub const DEFAULT_K_MAX: usize = 15;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("k_max {k_max} exceeds the neighbor index depth {depth}")]
    DepthExceeded { k_max: usize, depth: usize },
    #[error("vocabulary has {vocab} entries but the table has {table} rows")]
    SizeMismatch { vocab: usize, table: usize },
    #[error("asked for {n} neighbors from a vocabulary of {size}")]
    TooManyNeighbors { n: usize, size: usize },
    #[error("precision report: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Anything that maps a token's characters to a d-vector.
pub trait TokenEmbedder: Sync {
    fn embed_token(&self, token: &str, is_full_word: bool) -> Result<Vec<f64>>;
}

impl TokenEmbedder for Char2Subword {
    fn embed_token(&self, token: &str, is_full_word: bool) -> Result<Vec<f64>> {
        Ok(self.embed(token, is_full_word)?)
    }
}

/// Returns the table row of a vocabulary entry and `[UNK]`'s row otherwise;
/// the oracle stand-in for a perfectly trained module.
pub struct TableLookup<'a> {
    pub vocab: &'a Vocabulary,
    pub table: &'a EmbeddingTable,
}

impl TokenEmbedder for TableLookup<'_> {
    fn embed_token(&self, token: &str, _is_full_word: bool) -> Result<Vec<f64>> {
        let id = self.vocab.id(token).unwrap_or(self.vocab.unk_id());
        Ok(self.table.row(id).to_vec())
    }
}

fn check_sizes(vocab: &Vocabulary, table: &EmbeddingTable) -> Result<()> {
    if vocab.len() != table.rows() {
        return Err(EvalError::SizeMismatch {
            vocab: vocab.len(),
            table: table.rows(),
        });
    }
    Ok(())
}

/// Embeds every ordinary vocabulary entry as a subword piece, in id order.
pub fn predict_vocabulary(
    embedder: &dyn TokenEmbedder,
    vocab: &Vocabulary,
    exec: Exec,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let ids = vocab.ordinary_ids();
    exec.try_map(&ids, |&id| {
        let token = vocab.token(id).expect("ordinary id is in range");
        Ok((id, embedder.embed_token(token, false)?))
    })
}

/// Row maximizing `ê·e_v`, lowest id on ties.
pub fn argmax_dot(e_hat: &[f64], table: &EmbeddingTable) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for v in 0..table.rows() {
        let s = dot(e_hat, table.row(v));
        if s > best.1 {
            best = (v, s);
        }
    }
    best.0
}

fn accuracy_of(preds: &[(usize, Vec<f64>)], table: &EmbeddingTable) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds
        .iter()
        .filter(|(id, e_hat)| argmax_dot(e_hat, table) == *id)
        .count();
    hits as f64 / preds.len() as f64
}

/// Fraction of ordinary entries whose prediction scores its own row highest.
pub fn accuracy(
    embedder: &dyn TokenEmbedder,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    exec: Exec,
) -> Result<f64> {
    check_sizes(vocab, table)?;
    Ok(accuracy_of(&predict_vocabulary(embedder, vocab, exec)?, table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub tokens: usize,
    pub accuracy: f64,
    /// `precision[k − 1]` is the mean precision@k.
    pub precision: Vec<f64>,
    pub avg_precision: f64,
}

impl PrecisionReport {
    pub fn at(&self, k: usize) -> f64 {
        self.precision[k - 1]
    }

    pub fn k_max(&self) -> usize {
        self.precision.len()
    }

    /// `key value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "tokens {}", self.tokens).unwrap();
        writeln!(out, "accuracy {}", self.accuracy).unwrap();
        writeln!(out, "avg_precision {}", self.avg_precision).unwrap();
        for (i, p) in self.precision.iter().enumerate() {
            writeln!(out, "precision@{} {}", i + 1, p).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| EvalError::Parse(m);
        let mut tokens = None;
        let mut accuracy = None;
        let mut avg = None;
        let mut precision: Vec<(usize, f64)> = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("line {}: expected `key value`", n + 1)))?;
            let num = || {
                value
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {e}", n + 1)))
            };
            match key {
                "tokens" => {
                    tokens = Some(
                        value
                            .trim()
                            .parse()
                            .map_err(|e| bad(format!("line {}: {e}", n + 1)))?,
                    )
                }
                "accuracy" => accuracy = Some(num()?),
                "avg_precision" => avg = Some(num()?),
                _ => {
                    let k = key
                        .strip_prefix("precision@")
                        .and_then(|k| k.parse::<usize>().ok())
                        .ok_or_else(|| bad(format!("line {}: unknown key {key}", n + 1)))?;
                    precision.push((k, num()?));
                }
            }
        }
        precision.sort_by_key(|p| p.0);
        if precision.iter().enumerate().any(|(i, (k, _))| *k != i + 1) {
            return Err(bad("precision keys are not 1..k_max".into()));
        }
        Ok(Self {
            tokens: tokens.ok_or_else(|| bad("missing tokens".into()))?,
            accuracy: accuracy.ok_or_else(|| bad("missing accuracy".into()))?,
            precision: precision.into_iter().map(|p| p.1).collect(),
            avg_precision: avg.ok_or_else(|| bad("missing avg_precision".into()))?,
        })
    }
}

/// `|topk(e_i) ∩ topk(ê_i)| / k` for each k in `1..=k_max`, one row per token.
pub fn precision_rows(
    preds: &[(usize, Vec<f64>)],
    table: &EmbeddingTable,
    index: &NeighborIndex,
    k_max: usize,
    exec: Exec,
) -> Result<Vec<Vec<f64>>> {
    if k_max > index.k() {
        return Err(EvalError::DepthExceeded {
            k_max,
            depth: index.k(),
        });
    }
    exec.try_map(preds, |(id, e_hat)| {
        let truth = &index.neighbors(*id)[..k_max];
        let predicted: Vec<usize> = table.top_k(e_hat, k_max)?.into_iter().map(|p| p.0).collect();
        Ok((1..=k_max)
            .map(|k| {
                let hits = predicted[..k].iter().filter(|p| truth[..k].contains(p)).count();
                hits as f64 / k as f64
            })
            .collect())
    })
}

/// Builds the report from precomputed predictions.
pub fn report_from_predictions(
    preds: &[(usize, Vec<f64>)],
    table: &EmbeddingTable,
    index: &NeighborIndex,
    k_max: usize,
    exec: Exec,
) -> Result<PrecisionReport> {
    let rows = precision_rows(preds, table, index, k_max, exec)?;
    let n = rows.len();
    let mut precision = vec![0.0; k_max];
    for row in &rows {
        for (acc, p) in precision.iter_mut().zip(row) {
            *acc += p;
        }
    }
    if n > 0 {
        precision.iter_mut().for_each(|p| *p /= n as f64);
    }
    let avg_precision = if k_max == 0 {
        0.0
    } else {
        precision.iter().sum::<f64>() / k_max as f64
    };
    Ok(PrecisionReport {
        tokens: n,
        accuracy: accuracy_of(preds, table),
        precision,
        avg_precision,
    })
}

/// Accuracy and precision@1..k_max over the ordinary vocabulary.
pub fn precision_at_k(
    embedder: &dyn TokenEmbedder,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    index: &NeighborIndex,
    k_max: usize,
    exec: Exec,
) -> Result<PrecisionReport> {
    check_sizes(vocab, table)?;
    let preds = predict_vocabulary(embedder, vocab, exec)?;
    report_from_predictions(&preds, table, index, k_max, exec)
}

/// Top-`n` vocabulary entries by cosine to the embedding of `input`.
pub fn neighbor_query(
    embedder: &dyn TokenEmbedder,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    input: &str,
    is_full_word: bool,
    n: usize,
) -> Result<Vec<(String, f64)>> {
    check_sizes(vocab, table)?;
    if n > vocab.len() {
        return Err(EvalError::TooManyNeighbors {
            n,
            size: vocab.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let e_hat = embedder.embed_token(input, is_full_word)?;
    Ok(table
        .top_k(&e_hat, n)?
        .into_iter()
        .map(|(id, c)| (vocab.token(id).unwrap().to_string(), c))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqLengthStats {
    pub sentences: usize,
    pub mean_tokens: f64,
    pub max_tokens: usize,
    pub mean_subwords: f64,
    pub max_subwords: usize,
    /// Total subword pieces over total whitespace tokens.
    pub ratio: f64,
}

impl SeqLengthStats {
    pub fn to_text(&self) -> String {
        format!(
            "sentences {}\nmean_tokens {}\nmax_tokens {}\nmean_subwords {}\nmax_subwords {}\nratio {}\n",
            self.sentences,
            self.mean_tokens,
            self.max_tokens,
            self.mean_subwords,
            self.max_subwords,
            self.ratio
        )
    }
}

/// Whitespace-token counts against WordPiece counts per sentence.
pub fn seq_length_stats<S: AsRef<str>>(corpus: &[S], vocab: &Vocabulary) -> SeqLengthStats {
    let (mut tokens, mut pieces) = (Vec::new(), Vec::new());
    for sentence in corpus {
        let words = whitespace_split(sentence.as_ref());
        tokens.push(words.len());
        pieces.push(words.iter().map(|(w, _)| vocab.tokenize_word(w).len()).sum());
    }
    let total_t: usize = tokens.iter().sum();
    let total_p: usize = pieces.iter().sum();
    let n = corpus.len();
    let mean = |total: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    SeqLengthStats {
        sentences: n,
        mean_tokens: mean(total_t),
        max_tokens: tokens.iter().copied().max().unwrap_or(0),
        mean_subwords: mean(total_p),
        max_subwords: pieces.iter().copied().max().unwrap_or(0),
        ratio: if total_t == 0 {
            0.0
        } else {
            total_p as f64 / total_t as f64
        },
    }
}

fn escape_label(label: String) -> String {
    if label.chars().any(|c| c.is_whitespace() || c.is_control()) {
        label.escape_default().to_string()
    } else {
        label
    }
}

/// Attention maps as text:
///
/// ```text
/// input <token> full_word <bool> layers <l> heads <k> length <n>
/// layer <j> head <h>
/// <tab-separated column labels>
/// <row label> <tab> <n probabilities>
/// ```
pub fn dump_attention(model: &Char2Subword, input: &str, is_full_word: bool) -> Result<String> {
    let seq = model.encode(input, is_full_word);
    let out = forward(&model.params, &seq)?;
    let labels: Vec<String> = seq
        .chars
        .iter()
        .map(|&c| escape_label(model.alphabet.label(c)))
        .collect();
    let cfg = model.config();
    let mut text = String::new();
    writeln!(
        text,
        "input {} full_word {} layers {} heads {} length {}",
        escape_label(input.to_string()),
        is_full_word,
        cfg.n_layers,
        cfg.n_heads,
        seq.len()
    )
    .unwrap();
    for (j, heads) in out.maps.layers.iter().enumerate() {
        for (h, m) in heads.iter().enumerate() {
            writeln!(text, "layer {j} head {h}").unwrap();
            writeln!(text, "\t{}", labels.join("\t")).unwrap();
            for (r, label) in labels.iter().enumerate() {
                let row: Vec<String> = m.row(r).iter().map(|p| p.to_string()).collect();
                writeln!(text, "{label}\t{}", row.join("\t")).unwrap();
            }
        }
    }
    Ok(text)
}
