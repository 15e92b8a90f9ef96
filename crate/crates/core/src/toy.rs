//! Small synthetic vocabularies and tables for tests, benches and demos.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numerics::Matrix;
use crate::objectives::EmbeddingTable;
use crate::vocab::{Vocabulary, CLS_TOKEN, MASK_TOKEN, PAD_TOKEN, SEP_TOKEN, UNK_TOKEN};

pub const TOY_VOCAB_SIZE: usize = 50;
pub const TOY_DIM: usize = 16;

/// The five special tokens followed by distinct random lowercase words of
/// 5 to 9 letters; `size` counts the specials.
pub fn toy_vocabulary(size: usize, seed: u64) -> Vocabulary {
    let specials = [UNK_TOKEN, MASK_TOKEN, PAD_TOKEN, CLS_TOKEN, SEP_TOKEN];
    assert!(size >= specials.len(), "toy vocabulary needs room for the specials");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut entries: Vec<String> = specials.iter().map(|s| s.to_string()).collect();
    while entries.len() < size {
        let len = rng.random_range(5..=9);
        let word: String = (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
        if seen.insert(word.clone()) {
            entries.push(word);
        }
    }
    Vocabulary::from_entries(entries).expect("toy entries are distinct")
}

/// Gaussian directions scaled to unit norm, so every row is its own nearest
/// neighbor by both cosine and dot product.
pub fn toy_table(rows: usize, dim: usize, seed: u64) -> EmbeddingTable {
    toy_table_scaled(rows, dim, 1.0, seed)
}

/// [`toy_table`] with every row scaled to `row_norm`.
pub fn toy_table_scaled(rows: usize, dim: usize, row_norm: f64, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let row: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(row.into_iter().map(|x| row_norm * x / n));
    }
    EmbeddingTable::new(Matrix::new(rows, dim, data).expect("shape")).expect("nonzero rows")
}
