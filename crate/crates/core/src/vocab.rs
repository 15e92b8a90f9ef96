//! Subword vocabulary, greedy longest-prefix (WordPiece-style) segmentation,
//! and the character sequences fed to the model.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

/// Continuation marker carried by non-initial pieces.
pub const MARKER: &str = "##";
pub const UNK_TOKEN: &str = "[UNK]";
pub const MASK_TOKEN: &str = "[MASK]";
pub const PAD_TOKEN: &str = "[PAD]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";

/// Default character budget per sequence, marker included.
pub const DEFAULT_MAX_CHARS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VocabError {
    #[error("duplicate vocabulary entry {token:?} on lines {first} and {second}")]
    Duplicate {
        token: String,
        first: usize,
        second: usize,
    },
    #[error("vocabulary has no [UNK] entry")]
    MissingUnk,
    #[error("empty vocabulary entry on line {0}")]
    EmptyEntry(usize),
}

/// True for bracketed control tokens such as `[UNK]`, `[CLS]` or `[unused7]`.
pub fn is_special_token(token: &str) -> bool {
    let Some(inner) = token.strip_prefix('[').and_then(|t| t.strip_suffix(']')) else {
        return false;
    };
    !inner.is_empty() && inner.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    entries: Vec<String>,
    id_of: HashMap<String, usize>,
    unk_id: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from entries in id order.
    pub fn from_entries<I, S>(entries: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entries: Vec<String> = entries.into_iter().map(Into::into).collect();
        let mut id_of = HashMap::with_capacity(entries.len());
        for (id, token) in entries.iter().enumerate() {
            if token.is_empty() {
                return Err(VocabError::EmptyEntry(id + 1));
            }
            if let Some(prev) = id_of.insert(token.clone(), id) {
                return Err(VocabError::Duplicate {
                    token: token.clone(),
                    first: prev + 1,
                    second: id + 1,
                });
            }
        }
        let unk_id = *id_of.get(UNK_TOKEN).ok_or(VocabError::MissingUnk)?;
        Ok(Self {
            entries,
            id_of,
            unk_id,
        })
    }

    /// Parses the one-token-per-line text layout; line index is the id.
    pub fn load(text: &str) -> Result<Self, VocabError> {
        Self::from_entries(text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(e);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.entries.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.id_of.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.id_of.contains_key(token)
    }

    pub fn unk_id(&self) -> usize {
        self.unk_id
    }

    pub fn is_special(&self, id: usize) -> bool {
        self.token(id).is_some_and(is_special_token)
    }

    /// Ids of every non-special entry, ascending.
    pub fn ordinary_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&id| !self.is_special(id)).collect()
    }

    /// Greedy longest-prefix segmentation. Pieces after the first are looked
    /// up with the `##` prefix; any unmatched remainder yields `[UNK]` alone.
    pub fn tokenize_word(&self, word: &str) -> Vec<String> {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start + 1 < bounds.len() {
            let mut found = None;
            for end in (start + 1..bounds.len()).rev() {
                let sub = &word[bounds[start]..bounds[end]];
                let candidate = if start == 0 {
                    sub.to_string()
                } else {
                    format!("{MARKER}{sub}")
                };
                if self.contains(&candidate) {
                    found = Some((end, candidate));
                    break;
                }
            }
            match found {
                Some((end, piece)) => {
                    pieces.push(piece);
                    start = end;
                }
                None => return vec![UNK_TOKEN.to_string()],
            }
        }
        pieces
    }

    /// Segments `word` and maps the pieces to ids.
    pub fn tokenize_word_ids(&self, word: &str) -> Vec<usize> {
        self.tokenize_word(word)
            .iter()
            .map(|p| self.id(p).unwrap_or(self.unk_id))
            .collect()
    }
}

/// Splits on Unicode whitespace runs; every word is a full word.
pub fn whitespace_split(sentence: &str) -> Vec<(&str, bool)> {
    sentence.split_whitespace().map(|w| (w, true)).collect()
}

/// Index 0 is reserved for out-of-alphabet characters.
pub const UNK_CHAR: usize = 0;
/// Index 1 is reserved for the MLM mask.
pub const MASK_CHAR: usize = 1;
const RESERVED: usize = 2;

/// Character inventory of the model: two reserved slots followed by the
/// ordinary characters in code-point order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharAlphabet {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharAlphabet {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        let chars: Vec<char> = set.into_iter().collect();
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i + RESERVED))
            .collect();
        Self { chars, index }
    }

    /// Every character of every ordinary entry, plus the marker character.
    /// Bracketed special tokens contribute nothing.
    pub fn from_vocabulary(vocab: &Vocabulary) -> Self {
        Self::from_vocabulary_with(vocab, std::iter::empty())
    }

    /// Like [`CharAlphabet::from_vocabulary`] with extra characters, e.g. the
    /// punctuation and keyboard keys the noise model may introduce.
    pub fn from_vocabulary_with(vocab: &Vocabulary, extra: impl IntoIterator<Item = char>) -> Self {
        Self::new(
            vocab
                .entries()
                .iter()
                .filter(|e| !is_special_token(e))
                .flat_map(|e| e.chars())
                .chain(MARKER.chars())
                .chain(extra),
        )
    }

    /// Embedding rows needed: ordinary characters plus the reserved slots.
    pub fn size(&self) -> usize {
        self.chars.len() + RESERVED
    }

    pub fn ordinary_chars(&self) -> &[char] {
        &self.chars
    }

    /// Index range of ordinary characters.
    pub fn ordinary_range(&self) -> std::ops::Range<usize> {
        RESERVED..self.size()
    }

    pub fn index_of(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK_CHAR)
    }

    pub fn char_at(&self, index: usize) -> Option<char> {
        index.checked_sub(RESERVED).and_then(|i| self.chars.get(i)).copied()
    }

    /// Printable label for an index, used in attention dumps.
    pub fn label(&self, index: usize) -> String {
        match index {
            UNK_CHAR => "<unk>".to_string(),
            MASK_CHAR => "<mask>".to_string(),
            _ => self.char_at(index).map_or_else(|| "<?>".to_string(), String::from),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharSequence {
    pub token: String,
    pub chars: Vec<usize>,
    pub is_full_word: bool,
}

impl CharSequence {
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

/// Maps `token` onto alphabet indices. Full words get the `##` marker
/// prepended; the result is truncated to `max_chars`.
pub fn char_sequence(
    token: &str,
    is_full_word: bool,
    alphabet: &CharAlphabet,
    max_chars: usize,
) -> CharSequence {
    let prefix = if is_full_word { MARKER } else { "" };
    let chars = prefix
        .chars()
        .chain(token.chars())
        .take(max_chars)
        .map(|c| alphabet.index_of(c))
        .collect();
    CharSequence {
        token: token.to_string(),
        chars,
        is_full_word,
    }
}
