//! Character-level MLM through the frozen table projection.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{make_masking_plan, run_batches, Adam, Result, TrainConfig, TrainError, MASK_STREAM};
use crate::exec::Exec;
use crate::model::{backward, forward, Char2Subword, Char2SubwordParams, Gradient};
use crate::objectives::{loss_ce_gradient, EmbeddingTable, LossBreakdown};
use crate::vocab::{whitespace_split, CharSequence, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmEpochMetrics {
    pub epoch: usize,
    pub selected: usize,
    /// Mean cross-entropy over the selected tokens, before each update.
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

/// WordPiece ids per line; blank lines are skipped.
pub fn encode_corpus(text: &str, vocab: &Vocabulary) -> Vec<Vec<usize>> {
    text.lines()
        .map(|line| {
            whitespace_split(line)
                .into_iter()
                .flat_map(|(w, _)| vocab.tokenize_word_ids(w))
                .collect::<Vec<usize>>()
        })
        .filter(|ids| !ids.is_empty())
        .collect()
}

fn sample_gradient(
    params: &Char2SubwordParams,
    seq: &CharSequence,
    target: usize,
    table: &EmbeddingTable,
) -> Result<(f64, Gradient)> {
    let out = forward(params, seq)?;
    let (loss, upstream) = loss_ce_gradient(target, &out.embedding, table)?;
    Ok((loss, backward(params, seq, &out.cache, &upstream)?))
}

/// Mean cross-entropy of the masked sequences against their targets, and
/// its gradient. No sequences gives zero loss and a zero gradient.
pub fn mlm_step(
    params: &Char2SubwordParams,
    masked: &[CharSequence],
    targets: &[usize],
    table: &EmbeddingTable,
    exec: Exec,
) -> Result<(f64, Gradient)> {
    assert_eq!(masked.len(), targets.len(), "one target per masked sequence");
    let mut grad = params.tensors.zeros_like();
    if masked.is_empty() {
        return Ok((0.0, grad));
    }
    let pairs: Vec<(&CharSequence, usize)> = masked.iter().zip(targets.iter().copied()).collect();
    let results = exec.try_map(&pairs, |(seq, t)| sample_gradient(params, seq, *t, table))?;
    let mut loss = 0.0;
    for (l, g) in &results {
        loss += l;
        grad.accumulate(g);
    }
    let n = masked.len() as f64;
    grad.scale(1.0 / n);
    Ok((loss / n, grad))
}

/// Epochs of freshly masked corpus tokens, each predicted from its masked
/// characters through the frozen table.
pub fn pretrain_mlm(
    model: &Char2Subword,
    corpus: &[Vec<usize>],
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<(Char2Subword, Vec<MlmEpochMetrics>)> {
    config.validate()?;
    if corpus.iter().all(Vec::is_empty) {
        return Err(TrainError::EmptyCorpus);
    }
    if table.dim() != model.config().d_out {
        return Err(TrainError::Width {
            table: table.dim(),
            model: model.config().d_out,
        });
    }
    if vocab.len() != table.rows() {
        return Err(TrainError::Rows {
            vocab: vocab.len(),
            table: table.rows(),
        });
    }
    let checksum = table.checksum();
    let mut model = model.clone();
    let char_seqs: Vec<Vec<CharSequence>> = corpus
        .iter()
        .map(|ids| {
            ids.iter()
                .map(|&id| {
                    let token = vocab.token(id).ok_or(crate::objectives::ObjectiveError::IdOutOfRange {
                        id,
                        rows: vocab.len(),
                    })?;
                    Ok(model.encode(token, false))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut adam = Adam::new(config.adam, &model.params.tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(MASK_STREAM));
    let started = Instant::now();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut samples: Vec<(CharSequence, usize)> = Vec::new();
        for (ids, seqs) in corpus.iter().zip(&char_seqs) {
            let plan = make_masking_plan(ids, seqs, &model.alphabet, config.mask_prob, &mut rng);
            samples.extend(plan.apply(seqs));
        }
        let total = run_batches(&mut model, &mut adam, &samples, config, epoch, |m, (seq, t)| {
            let (loss, grad) = sample_gradient(&m.params, seq, *t, table)?;
            let breakdown = LossBreakdown {
                ce: loss,
                total: loss,
                ..LossBreakdown::default()
            };
            Ok((breakdown, grad))
        })?;
        log.push(MlmEpochMetrics {
            epoch,
            selected: samples.len(),
            loss: if samples.is_empty() {
                0.0
            } else {
                total.total / samples.len() as f64
            },
            wall_time_secs: config
                .record_wall_time
                .then(|| started.elapsed().as_secs_f64()),
        });
    }
    if table.checksum() != checksum {
        return Err(TrainError::TableMutated);
    }
    Ok((model, log))
}
