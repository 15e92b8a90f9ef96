//! The char2subword transformer: a character sequence in, one subword-sized
//! embedding out.

mod checkpoint;
mod params;
mod transformer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{NumericsError, LN_EPS};
use crate::vocab::{char_sequence, CharAlphabet, CharSequence, DEFAULT_MAX_CHARS};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{init_params, Char2SubwordParams, Gradient, LayerParams, ParamTensors};
pub use transformer::{backward, forward, AttentionMaps, ForwardCache, ForwardOutput};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("empty character sequence")]
    EmptySequence,
    #[error("sequence of {len} characters exceeds max_chars {max}")]
    TooLong { len: usize, max: usize },
    #[error("character index {index} outside an alphabet of {size}")]
    UnknownChar { index: usize, size: usize },
    #[error("forward cache does not belong to this sequence/parameter set")]
    CacheMismatch,
    #[error("upstream gradient has length {got}, expected {expected}")]
    UpstreamLength { expected: usize, got: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Character-embedding width, kept through every attention layer.
    pub d_char: usize,
    /// Output width; must equal the embedding-table width.
    pub d_out: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_chars: usize,
    pub ln_eps: f64,
    /// Conventional pre-LN residuals (add the un-normalized input) instead of
    /// adding the normalized input.
    pub standard_preln: bool,
    /// Prepend `##` to whole words rather than relying on vocabulary pieces.
    pub marker_on_full_words: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_char: 64,
            d_out: 768,
            n_layers: 8,
            n_heads: 8,
            max_chars: DEFAULT_MAX_CHARS,
            ln_eps: LN_EPS,
            standard_preln: false,
            marker_on_full_words: true,
        }
    }
}

impl ModelConfig {
    /// The small configuration used throughout the test-suite.
    pub fn toy(d_out: usize) -> Self {
        Self {
            d_char: 8,
            d_out,
            n_layers: 2,
            n_heads: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.d_char == 0 || self.d_out == 0 || self.n_heads == 0 || self.max_chars == 0 {
            return bad("d_char, d_out, n_heads and max_chars must be at least 1".into());
        }
        if self.d_char % self.n_heads != 0 {
            return bad(format!(
                "d_char {} is not divisible by n_heads {}",
                self.d_char, self.n_heads
            ));
        }
        if self.d_char % 2 != 0 {
            return bad(format!("d_char {} must be even for positional encodings", self.d_char));
        }
        if !(self.ln_eps > 0.0) {
            return bad(format!("ln_eps must be positive, got {}", self.ln_eps));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_char / self.n_heads
    }

    /// Character sequence for `token` under this config's marker convention
    /// and length budget.
    pub fn encode(&self, alphabet: &CharAlphabet, token: &str, is_full_word: bool) -> CharSequence {
        let mut seq = char_sequence(
            token,
            is_full_word && self.marker_on_full_words,
            alphabet,
            self.max_chars,
        );
        seq.is_full_word = is_full_word;
        seq
    }
}

/// Exact number of trainable scalars in the module.
pub fn param_count(config: &ModelConfig, alphabet_size: usize) -> usize {
    let d = config.d_char;
    let per_layer = 3 * d * d // per-head Q/K/V projections, k heads of width d/k
        + d * d // W^O
        + d * 4 * d + 4 * d // W1, b1
        + 4 * d * d + d // W2, b2
        + 4 * d; // two layer-norm gain/bias pairs
    alphabet_size * d + config.n_layers * per_layer + d * config.d_out + config.d_out + 2 * config.d_out
}

/// Parameters held by a `v × d` lookup table.
pub fn table_param_count(v: usize, d: usize) -> usize {
    v * d
}

/// Trained parameters together with the alphabet they index.
#[derive(Debug, Clone, PartialEq)]
pub struct Char2Subword {
    pub params: Char2SubwordParams,
    pub alphabet: CharAlphabet,
}

impl Char2Subword {
    pub fn new(config: ModelConfig, alphabet: CharAlphabet, seed: u64) -> Result<Self, ModelError> {
        let params = init_params(&config, alphabet.size(), seed)?;
        Ok(Self { params, alphabet })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    pub fn encode(&self, token: &str, is_full_word: bool) -> CharSequence {
        self.params.config.encode(&self.alphabet, token, is_full_word)
    }

    /// ê for a token string.
    pub fn embed(&self, token: &str, is_full_word: bool) -> Result<Vec<f64>, ModelError> {
        Ok(forward(&self.params, &self.encode(token, is_full_word))?.embedding)
    }
}
