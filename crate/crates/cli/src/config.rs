//! Versioned TOML run configuration, merged with command-line flags.
//!
//! ```toml
//! version = 1
//! seed = 7
//!
//! [paths]
//! vocab = "vocab.txt"
//! table = "table.txt"
//!
//! [model]
//! d_char = 8
//! n_layers = 2
//!
//! [train]
//! epochs = 300
//! lr = 0.001
//!
//! [train.weights]
//! ce = 0.0
//!
//! [noise]
//! p_noise = 0.5
//! ops = ["swap", "drop"]
//!
//! [eval]
//! k = 15
//! mode = "hybrid"
//! ```
//!
//! Every key is optional except `version`. Relative paths in the file are
//! resolved against the file's directory.

use std::path::{Path, PathBuf};

use char2subword::embedder::EmbedMode;
use char2subword::model::ModelConfig;
use char2subword::noise::{NoiseConfig, NoiseOp};
use char2subword::objectives::LossWeights;
use char2subword::training::{AdamConfig, TrainConfig};
use char2subword::Exec;
use serde::Deserialize;

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub vocab: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub layouts: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl Paths {
    fn rebase(&mut self, dir: &Path) {
        for p in [
            &mut self.vocab,
            &mut self.table,
            &mut self.layouts,
            &mut self.corpus,
            &mut self.checkpoint,
            &mut self.out,
            &mut self.metrics,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_char: Option<usize>,
    /// Defaults to the table width.
    pub d_out: Option<usize>,
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub max_chars: Option<usize>,
    pub ln_eps: Option<f64>,
    pub standard_preln: Option<bool>,
    pub marker_on_full_words: Option<bool>,
}

impl ModelSection {
    pub fn build(&self, table_dim: usize) -> ModelConfig {
        let base = ModelConfig::default();
        ModelConfig {
            d_char: self.d_char.unwrap_or(base.d_char),
            d_out: self.d_out.unwrap_or(table_dim),
            n_layers: self.n_layers.unwrap_or(base.n_layers),
            n_heads: self.n_heads.unwrap_or(base.n_heads),
            max_chars: self.max_chars.unwrap_or(base.max_chars),
            ln_eps: self.ln_eps.unwrap_or(base.ln_eps),
            standard_preln: self.standard_preln.unwrap_or(base.standard_preln),
            marker_on_full_words: self.marker_on_full_words.unwrap_or(base.marker_on_full_words),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub batch_size: Option<usize>,
    pub accumulation_steps: Option<usize>,
    pub grad_clip: Option<f64>,
    pub neighbor_k: Option<usize>,
    pub mask_prob: Option<f64>,
    pub record_wall_time: Option<bool>,
    pub sequential: Option<bool>,
    pub weights: Option<LossWeights>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub p_noise: Option<f64>,
    pub ops: Option<Vec<NoiseOp>>,
    pub punctuation: Option<String>,
    pub min_length: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub k: Option<usize>,
    pub mode: Option<EmbedMode>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: Option<u32>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::usage("config", e))?;
        match cfg.version {
            Some(CONFIG_VERSION) => {}
            Some(v) => {
                return Err(CliError::usage(
                    "config",
                    format!("unsupported config version {v}, expected {CONFIG_VERSION}"),
                ))
            }
            None => return Err(CliError::usage("config", "missing `version` key")),
        }
        cfg.paths.rebase(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::usage("config", "a seed is required (--seed or `seed` in the config)"))
    }

    pub fn exec(&self) -> Exec {
        if self.train.sequential.unwrap_or(false) {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }

    pub fn noise(&self) -> NoiseConfig {
        let base = NoiseConfig::default();
        NoiseConfig {
            enabled_ops: self.noise.ops.clone().unwrap_or(base.enabled_ops),
            layouts: base.layouts,
            punctuation_set: self
                .noise
                .punctuation
                .as_ref()
                .map(|s| s.chars().collect())
                .unwrap_or(base.punctuation_set),
            min_length: self.noise.min_length.unwrap_or(base.min_length),
            p_noise: self.noise.p_noise.unwrap_or(base.p_noise),
        }
    }

    pub fn train(&self, noise: NoiseConfig) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let base = TrainConfig::default();
        let adam = AdamConfig {
            lr: t.lr.unwrap_or(base.adam.lr),
            beta1: t.beta1.unwrap_or(base.adam.beta1),
            beta2: t.beta2.unwrap_or(base.adam.beta2),
            eps: t.eps.unwrap_or(base.adam.eps),
        };
        let cfg = TrainConfig {
            adam,
            batch_size: t.batch_size.unwrap_or(base.batch_size),
            accumulation_steps: t.accumulation_steps.unwrap_or(base.accumulation_steps),
            epochs: t.epochs.unwrap_or(base.epochs),
            seed: self.seed()?,
            weights: t.weights.clone().unwrap_or_default(),
            noise,
            grad_clip: t.grad_clip.or(base.grad_clip),
            neighbor_k: t.neighbor_k.unwrap_or(base.neighbor_k),
            eval_k_max: self.eval.k.unwrap_or(base.eval_k_max),
            mask_prob: t.mask_prob.unwrap_or(base.mask_prob),
            record_wall_time: t.record_wall_time.unwrap_or(false),
            exec: self.exec(),
        };
        cfg.validate().map_err(|e| CliError::usage("config", e))?;
        Ok(cfg)
    }
}
