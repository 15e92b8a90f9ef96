//! Character-level masking for the MLM phase.

use rand::Rng;

use crate::vocab::{CharAlphabet, CharSequence, MARKER, MASK_CHAR};

pub const DEFAULT_MASK_PROB: f64 = 0.15;
pub const MASK_SHARE: f64 = 0.8;
pub const RANDOMIZE_SHARE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CharAction {
    Mask,
    /// Replace with this ordinary alphabet index.
    Randomize(usize),
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedToken {
    /// Position of the token within its sequence.
    pub position: usize,
    pub target: usize,
    /// Leading marker characters that are left untouched.
    pub offset: usize,
    /// One action per character after the marker.
    pub actions: Vec<CharAction>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaskingPlan {
    pub tokens: Vec<MaskedToken>,
}

impl MaskingPlan {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Masked character sequences of the selected tokens with their targets.
    pub fn apply(&self, char_seqs: &[CharSequence]) -> Vec<(CharSequence, usize)> {
        self.tokens
            .iter()
            .map(|t| {
                let mut seq = char_seqs[t.position].clone();
                for (slot, action) in seq.chars[t.offset..].iter_mut().zip(&t.actions) {
                    match *action {
                        CharAction::Mask => *slot = MASK_CHAR,
                        CharAction::Randomize(c) => *slot = c,
                        CharAction::Keep => {}
                    }
                }
                (seq, t.target)
            })
            .collect()
    }
}

/// Number of leading `#` slots that encode the marker rather than content.
fn marker_len(seq: &CharSequence, alphabet: &CharAlphabet) -> usize {
    let hash = alphabet.index_of('#');
    let marked = seq.token.starts_with(MARKER) || seq.is_full_word;
    let leading = seq.chars.iter().take(2).filter(|&&c| c == hash).count();
    if marked && leading == 2 {
        2
    } else {
        0
    }
}

fn random_other<R: Rng + ?Sized>(original: usize, alphabet: &CharAlphabet, rng: &mut R) -> Option<usize> {
    let range = alphabet.ordinary_range();
    if range.contains(&original) {
        if range.len() < 2 {
            return None;
        }
        let pick = rng.random_range(range.start..range.end - 1);
        Some(if pick >= original { pick + 1 } else { pick })
    } else if range.is_empty() {
        None
    } else {
        Some(rng.random_range(range))
    }
}

/// Selects each token with probability `select_p`; every character of a
/// selected token is masked, randomized or kept with probability 0.8/0.1/0.1.
pub fn make_masking_plan<R: Rng + ?Sized>(
    token_ids: &[usize],
    char_seqs: &[CharSequence],
    alphabet: &CharAlphabet,
    select_p: f64,
    rng: &mut R,
) -> MaskingPlan {
    assert_eq!(token_ids.len(), char_seqs.len(), "token ids and sequences must align");
    let mut tokens = Vec::new();
    for (position, (&target, seq)) in token_ids.iter().zip(char_seqs).enumerate() {
        if !rng.random_bool(select_p) {
            continue;
        }
        let offset = marker_len(seq, alphabet);
        let actions = seq.chars[offset..]
            .iter()
            .map(|&c| {
                let u: f64 = rng.random();
                if u < MASK_SHARE {
                    CharAction::Mask
                } else if u < MASK_SHARE + RANDOMIZE_SHARE {
                    random_other(c, alphabet, rng).map_or(CharAction::Keep, CharAction::Randomize)
                } else {
                    CharAction::Keep
                }
            })
            .collect();
        tokens.push(MaskedToken {
            position,
            target,
            offset,
            actions,
        });
    }
    MaskingPlan { tokens }
}
