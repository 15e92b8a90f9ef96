//! Simulation training against the frozen table, and MLM pre-training.

mod adam;
mod masking;
mod mlm;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{report_from_predictions, EvalError, DEFAULT_K_MAX};
use crate::exec::Exec;
use crate::model::{backward, forward, Char2Subword, Gradient, ModelError};
use crate::noise::{sample_noisy, NoiseConfig, NoiseError};
use crate::objectives::{
    combined_loss_gradient, EmbeddingTable, LossBreakdown, LossWeights, NeighborIndex,
    ObjectiveError, DEFAULT_NEIGHBOR_K,
};
use crate::vocab::{CharSequence, Vocabulary};

pub use adam::{Adam, AdamConfig};
pub use masking::{
    make_masking_plan, CharAction, MaskedToken, MaskingPlan, DEFAULT_MASK_PROB, MASK_SHARE,
    RANDOMIZE_SHARE,
};
pub use mlm::{encode_corpus, mlm_step, pretrain_mlm, MlmEpochMetrics};

/// Offset of the noise stream from the base seed.
pub const NOISE_STREAM: u64 = 1;
/// Offset of the masking stream from the base seed.
pub const MASK_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("table width {table} does not match model output width {model}")]
    Width { table: usize, model: usize },
    #[error("vocabulary has {vocab} entries but the table has {table} rows")]
    Rows { vocab: usize, table: usize },
    #[error("non-finite {what} at epoch {epoch}, step {step}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        step: u64,
    },
    #[error("the corpus is empty")]
    EmptyCorpus,
    #[error("embedding table changed during training")]
    TableMutated,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    /// Samples per gradient evaluation.
    pub batch_size: usize,
    /// Batches accumulated into one update; the effective batch is
    /// `batch_size × accumulation_steps`.
    pub accumulation_steps: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub noise: NoiseConfig,
    /// Global gradient-norm ceiling.
    pub grad_clip: Option<f64>,
    pub neighbor_k: usize,
    pub eval_k_max: usize,
    pub mask_prob: f64,
    /// Adds wall-clock seconds to each metrics record, which makes the log
    /// differ between otherwise identical runs.
    pub record_wall_time: bool,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 32,
            accumulation_steps: 1,
            epochs: 10,
            seed: 0,
            weights: LossWeights::default(),
            noise: NoiseConfig::default(),
            grad_clip: None,
            neighbor_k: DEFAULT_NEIGHBOR_K,
            eval_k_max: DEFAULT_K_MAX,
            mask_prob: DEFAULT_MASK_PROB,
            record_wall_time: false,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        self.adam.validate().map_err(TrainError::Config)?;
        if self.batch_size == 0 || self.accumulation_steps == 0 {
            return bad("batch_size and accumulation_steps must be at least 1".into());
        }
        if self.neighbor_k == 0 || self.eval_k_max == 0 {
            return bad("neighbor_k and eval_k_max must be at least 1".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return bad(format!("mask_prob must lie in [0, 1], got {}", self.mask_prob));
        }
        self.weights.validate()?;
        self.noise.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub samples: usize,
    /// Mean per-sample loss terms over the epoch.
    pub loss: LossBreakdown,
    pub accuracy: f64,
    pub prec_at_1: f64,
    pub k_max: usize,
    pub prec_at_k_max: f64,
    pub avg_precision: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

/// One JSON object per line.
pub fn metrics_to_jsonl<T: Serialize>(records: &[T]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("metrics serialize") + "\n")
        .collect()
}

fn clip(grad: &mut Gradient, limit: Option<f64>) {
    if let Some(c) = limit {
        let n = grad.squared_norm().sqrt();
        if n > c {
            grad.scale(c / n);
        }
    }
}

/// Runs minibatches over `samples`, applying an Adam update after every
/// `accumulation_steps` batches. `eval` maps one sample to its loss value,
/// a term breakdown and its gradient.
pub(crate) fn run_batches<S: Sync, F>(
    model: &mut Char2Subword,
    adam: &mut Adam,
    samples: &[S],
    config: &TrainConfig,
    epoch: usize,
    eval: F,
) -> Result<LossBreakdown>
where
    F: Fn(&Char2Subword, &S) -> Result<(LossBreakdown, Gradient)> + Sync + Send,
{
    let mut total = LossBreakdown::default();
    let mut pending = model.params.tensors.zeros_like();
    let mut pending_n = 0usize;
    let mut micro = 0usize;
    let batches: Vec<&[S]> = samples.chunks(config.batch_size).collect();
    for (b, batch) in batches.iter().enumerate() {
        let frozen: &Char2Subword = model;
        let results = config.exec.try_map(batch, |s| eval(frozen, s))?;
        for (loss, grad) in &results {
            if !loss.total.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "loss",
                    epoch,
                    step: adam.steps() + 1,
                });
            }
            total.accumulate(loss);
            pending.accumulate(grad);
            pending_n += 1;
        }
        micro += 1;
        if micro == config.accumulation_steps || b + 1 == batches.len() {
            pending.scale(1.0 / pending_n as f64);
            clip(&mut pending, config.grad_clip);
            if !pending.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "gradient",
                    epoch,
                    step: adam.steps() + 1,
                });
            }
            adam.step(&mut model.params.tensors, &pending);
            pending = model.params.tensors.zeros_like();
            pending_n = 0;
            micro = 0;
        }
    }
    Ok(total)
}

/// Trains `model` to reproduce the rows of `table` from the characters of
/// the ordinary vocabulary entries. Returns the trained copy and one metrics
/// record per epoch.
pub fn train_simulation(
    model: &Char2Subword,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<(Char2Subword, Vec<EpochMetrics>)> {
    config.validate()?;
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
    let exec = config.exec;
    let k_max = config.eval_k_max.min(table.rows());
    let depth = k_max.max(config.neighbor_k).min(table.rows());
    let index = NeighborIndex::build(table, depth, exec)?;
    let nbr_index = index.truncated(config.neighbor_k.min(depth))?;

    let mut model = model.clone();
    let mut adam = Adam::new(config.adam, &model.params.tensors);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(NOISE_STREAM));
    let ids = vocab.ordinary_ids();
    let mut log = Vec::with_capacity(config.epochs);
    let started = Instant::now();

    for epoch in 1..=config.epochs {
        let mut order = ids.clone();
        order.shuffle(&mut order_rng);
        let samples: Vec<(usize, CharSequence)> = order
            .into_iter()
            .map(|id| {
                let token = vocab.token(id).expect("ordinary id");
                let noisy = sample_noisy(token, &mut noise_rng, &config.noise);
                (id, model.encode(&noisy, false))
            })
            .collect();

        let total = run_batches(&mut model, &mut adam, &samples, config, epoch, |m, (id, seq)| {
            let out = forward(&m.params, seq)?;
            let (loss, upstream) = combined_loss_gradient(
                *id,
                table.row(*id),
                &out.embedding,
                table,
                &nbr_index,
                &config.weights,
            )?;
            let grad = backward(&m.params, seq, &out.cache, &upstream)?;
            Ok((loss, grad))
        })?;

        let preds = exec.try_map(&ids, |&id| -> Result<(usize, Vec<f64>)> {
            let seq = model.encode(vocab.token(id).unwrap(), false);
            Ok((id, forward(&model.params, &seq)?.embedding))
        })?;
        let report = report_from_predictions(&preds, table, &index, k_max, exec)?;
        let n = samples.len().max(1) as f64;
        log.push(EpochMetrics {
            epoch,
            samples: samples.len(),
            loss: total.scaled(1.0 / n),
            accuracy: report.accuracy,
            prec_at_1: report.at(1),
            k_max,
            prec_at_k_max: report.at(k_max),
            avg_precision: report.avg_precision,
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
