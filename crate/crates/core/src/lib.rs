//! A character-level transformer that learns to stand in for a frozen
//! subword embedding table, with the losses, noise model, trainers,
//! evaluation and deployment modes around it.

pub mod embedder;
pub mod evaluation;
pub mod exec;
pub mod model;
pub mod noise;
pub mod numerics;
pub mod objectives;
pub mod toy;
pub mod training;
pub mod vocab;

pub use exec::Exec;
pub use model::{Char2Subword, ModelConfig};
pub use objectives::{EmbeddingTable, LossWeights, NeighborIndex};
pub use vocab::{CharAlphabet, Vocabulary};
