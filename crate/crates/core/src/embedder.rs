//! Sentence embedding in three input modes: plain table lookup, the module
//! for every word, or table lookup with module backoff for unknown words.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Char2Subword, ModelError};
use crate::objectives::EmbeddingTable;
use crate::vocab::{whitespace_split, Vocabulary};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("mode {0} needs a trained model")]
    ModelRequired(EmbedMode),
    #[error("unknown embedding mode {0:?} (expected table_only, full or hybrid)")]
    UnknownMode(String),
    #[error("vocabulary has {vocab} entries but the table has {table} rows")]
    SizeMismatch { vocab: usize, table: usize },
    #[error("model output width {model} does not match table width {table}")]
    Width { model: usize, table: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMode {
    TableOnly,
    Full,
    Hybrid,
}

impl EmbedMode {
    pub fn name(self) -> &'static str {
        match self {
            EmbedMode::TableOnly => "table_only",
            EmbedMode::Full => "full",
            EmbedMode::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for EmbedMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmbedMode {
    type Err = EmbedError;

    fn from_str(s: &str) -> Result<Self> {
        [EmbedMode::TableOnly, EmbedMode::Full, EmbedMode::Hybrid]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| EmbedError::UnknownMode(s.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Table,
    Char2Subword,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Table => "table",
            Provenance::Char2Subword => "char2subword",
        })
    }
}

/// Aligned vectors, provenance tags and the strings they came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddedSequence {
    pub vectors: Vec<Vec<f64>>,
    pub provenance: Vec<Provenance>,
    pub pieces: Vec<String>,
}

impl EmbeddedSequence {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    fn push(&mut self, piece: &str, provenance: Provenance, vector: Vec<f64>) {
        self.pieces.push(piece.to_string());
        self.provenance.push(provenance);
        self.vectors.push(vector);
    }
}

pub fn embed_sequence(
    mode: EmbedMode,
    sentence: &str,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    model: Option<&Char2Subword>,
) -> Result<EmbeddedSequence> {
    if vocab.len() != table.rows() {
        return Err(EmbedError::SizeMismatch {
            vocab: vocab.len(),
            table: table.rows(),
        });
    }
    let model = match (mode, model) {
        (EmbedMode::TableOnly, _) => None,
        (_, None) => return Err(EmbedError::ModelRequired(mode)),
        (_, Some(m)) if m.config().d_out != table.dim() => {
            return Err(EmbedError::Width {
                model: m.config().d_out,
                table: table.dim(),
            })
        }
        (_, Some(m)) => Some(m),
    };
    let mut out = EmbeddedSequence::default();
    for (word, is_full_word) in whitespace_split(sentence) {
        match mode {
            EmbedMode::TableOnly => {
                for piece in vocab.tokenize_word(word) {
                    let id = vocab.id(&piece).expect("tokenizer emits vocabulary entries");
                    out.push(&piece, Provenance::Table, table.row(id).to_vec());
                }
            }
            EmbedMode::Hybrid if vocab.contains(word) => {
                let id = vocab.id(word).unwrap();
                out.push(word, Provenance::Table, table.row(id).to_vec());
            }
            EmbedMode::Full | EmbedMode::Hybrid => {
                let m = model.expect("model checked above");
                out.push(word, Provenance::Char2Subword, m.embed(word, is_full_word)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub words: usize,
    pub in_vocab: usize,
    pub backoff: usize,
}

impl Coverage {
    pub fn in_vocab_fraction(&self) -> f64 {
        if self.words == 0 {
            0.0
        } else {
            self.in_vocab as f64 / self.words as f64
        }
    }

    pub fn backoff_fraction(&self) -> f64 {
        if self.words == 0 {
            0.0
        } else {
            self.backoff as f64 / self.words as f64
        }
    }
}

/// Whole-word vocabulary hits against hybrid-mode backoff candidates.
pub fn coverage_report<S: AsRef<str>>(corpus: &[S], vocab: &Vocabulary) -> Coverage {
    let mut c = Coverage {
        words: 0,
        in_vocab: 0,
        backoff: 0,
    };
    for sentence in corpus {
        for (w, _) in whitespace_split(sentence.as_ref()) {
            c.words += 1;
            if vocab.contains(w) {
                c.in_vocab += 1;
            } else {
                c.backoff += 1;
            }
        }
    }
    c
}

/// `n d mode` header, then `piece<TAB>provenance<TAB>values` per vector.
pub fn write_embeddings(outputs: &[EmbeddedSequence], mode: EmbedMode, dim: usize) -> String {
    let n: usize = outputs.iter().map(EmbeddedSequence::len).sum();
    let mut text = format!("{n} {dim} {mode}\n");
    for seq in outputs {
        for ((piece, prov), v) in seq.pieces.iter().zip(&seq.provenance).zip(&seq.vectors) {
            let values: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            writeln!(text, "{piece}\t{prov}\t{}", values.join(" ")).unwrap();
        }
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::toy::toy_table;
    use crate::vocab::CharAlphabet;

    fn setup() -> (Vocabulary, EmbeddingTable, Char2Subword) {
        let vocab =
            Vocabulary::from_entries(["[UNK]", "hola", "que", "tal", "un", "##able", "the"]).unwrap();
        let table = toy_table(7, 6, 3);
        let model = Char2Subword::new(
            ModelConfig::toy(6),
            CharAlphabet::from_vocabulary(&vocab),
            2,
        )
        .unwrap();
        (vocab, table, model)
    }

    #[test]
    fn hybrid_uses_table_rows_for_known_words() {
        let (v, t, m) = setup();
        let out = embed_sequence(EmbedMode::Hybrid, "hola que tal", &v, &t, Some(&m)).unwrap();
        assert!(out.provenance.iter().all(|p| *p == Provenance::Table));
        for (piece, vec) in out.pieces.iter().zip(&out.vectors) {
            assert_eq!(vec.as_slice(), t.row(v.id(piece).unwrap()));
        }
        let out = embed_sequence(EmbedMode::Hybrid, "hola unable", &v, &t, Some(&m)).unwrap();
        assert_eq!(out.provenance, vec![Provenance::Table, Provenance::Char2Subword]);
        assert_eq!(out.vectors[1], m.embed("unable", true).unwrap());
    }

    #[test]
    fn full_and_table_only_lengths() {
        let (v, t, m) = setup();
        let full = embed_sequence(EmbedMode::Full, " unable  the xyz ", &v, &t, Some(&m)).unwrap();
        assert_eq!(full.len(), 3);
        assert!(full.provenance.iter().all(|p| *p == Provenance::Char2Subword));
        let table_only = embed_sequence(EmbedMode::TableOnly, "unable the", &v, &t, None).unwrap();
        assert_eq!(table_only.pieces, vec!["un", "##able", "the"]);
        assert!(embed_sequence(EmbedMode::Full, "", &v, &t, Some(&m)).unwrap().is_empty());
        assert!(matches!(
            embed_sequence(EmbedMode::Full, "x", &v, &t, None),
            Err(EmbedError::ModelRequired(EmbedMode::Full))
        ));
    }

    #[test]
    fn coverage_counts() {
        let (v, _, _) = setup();
        let all_in = coverage_report(&["hola que", "tal"], &v);
        assert_eq!((all_in.in_vocab_fraction(), all_in.backoff_fraction()), (1.0, 0.0));
        let none = coverage_report(&["unable xyz"], &v);
        assert_eq!((none.in_vocab_fraction(), none.backoff_fraction()), (0.0, 1.0));
        // counted by hand: 5 hits on the first line, 6 on the second ("##able" is an entry)
        let corpus = [
            "hola que tal the un Hola holas que? tal, zzz",
            "the un hola que tal THE able ##able x y",
        ];
        let c = coverage_report(&corpus, &v);
        assert_eq!(c.words, 20);
        assert_eq!(c.in_vocab, 11);
        assert_eq!(c.backoff, 9);
    }

    #[test]
    fn output_format() {
        let (v, t, m) = setup();
        let out = embed_sequence(EmbedMode::Hybrid, "hola xyz", &v, &t, Some(&m)).unwrap();
        let text = write_embeddings(&[out], EmbedMode::Hybrid, 6);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "2 6 hybrid");
        assert!(lines[1].starts_with("hola\ttable\t"));
        assert!(lines[2].starts_with("xyz\tchar2subword\t"));
        let values: Vec<f64> = lines[1]
            .split('\t')
            .nth(2)
            .unwrap()
            .split(' ')
            .map(|x| x.parse().unwrap())
            .collect();
        assert_eq!(values.as_slice(), t.row(1));
        assert_eq!("hybrid".parse::<EmbedMode>().unwrap(), EmbedMode::Hybrid);
    }
}
