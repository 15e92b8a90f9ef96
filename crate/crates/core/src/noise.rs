//! Single-character noise used to make the module robust to misspellings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{is_special_token, MARKER};

pub const DEFAULT_PUNCTUATION: [char; 8] = ['(', ')', '-', '.', ',', '\'', ':', ';'];
pub const DEFAULT_MIN_LENGTH: usize = 5;
pub const DEFAULT_P_NOISE: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("token has {len} editable characters, noise needs at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("special token {0} is never noised")]
    Special(String),
    #[error("no position of {0:?} admits this edit")]
    NoEffect(String),
    #[error("no keyboard layout keys to mistype with")]
    NoLayoutKeys,
    #[error("edit position {pos} outside an editable region of {len}")]
    Position { pos: usize, len: usize },
    #[error("layout {layout}, key {key:?}: {reason}")]
    Layout {
        layout: String,
        key: String,
        reason: String,
    },
    #[error("layout document: {0}")]
    Parse(String),
    #[error("invalid noise config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, NoiseError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseOp {
    Mistype,
    Repeat,
    Swap,
    Drop,
    Toggle,
    Punctuation,
}

impl NoiseOp {
    pub const ALL: [NoiseOp; 6] = [
        NoiseOp::Mistype,
        NoiseOp::Repeat,
        NoiseOp::Swap,
        NoiseOp::Drop,
        NoiseOp::Toggle,
        NoiseOp::Punctuation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseOp::Mistype => "mistype",
            NoiseOp::Repeat => "repeat",
            NoiseOp::Swap => "swap",
            NoiseOp::Drop => "drop",
            NoiseOp::Toggle => "toggle",
            NoiseOp::Punctuation => "punctuation",
        }
    }
}

impl fmt::Display for NoiseOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseOp {
    type Err = NoiseError;

    fn from_str(s: &str) -> Result<Self> {
        NoiseOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| NoiseError::InvalidConfig(format!("unknown noise op {s:?}")))
    }
}

/// A concrete edit; positions index the editable region (marker excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edit {
    Mistype { pos: usize, with: char },
    Repeat { pos: usize },
    /// Exchange positions `pos` and `pos + 1`.
    Swap { pos: usize },
    Drop { pos: usize },
    Toggle { pos: usize },
    /// Insert `mark` before position `pos` (`pos == len` appends).
    Punctuation { pos: usize, mark: char },
}

impl Edit {
    pub fn op(&self) -> NoiseOp {
        match self {
            Edit::Mistype { .. } => NoiseOp::Mistype,
            Edit::Repeat { .. } => NoiseOp::Repeat,
            Edit::Swap { .. } => NoiseOp::Swap,
            Edit::Drop { .. } => NoiseOp::Drop,
            Edit::Toggle { .. } => NoiseOp::Toggle,
            Edit::Punctuation { .. } => NoiseOp::Punctuation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyboardLayout {
    name: String,
    neighbors: BTreeMap<char, Vec<char>>,
}

impl KeyboardLayout {
    pub fn new(name: impl Into<String>, neighbors: BTreeMap<char, Vec<char>>) -> Result<Self> {
        let name = name.into();
        for (key, list) in &neighbors {
            let fail = |reason: &str| NoiseError::Layout {
                layout: name.clone(),
                key: key.to_string(),
                reason: reason.into(),
            };
            if list.is_empty() {
                return Err(fail("empty neighbor list"));
            }
            if list.contains(key) {
                return Err(fail("lists itself as a neighbor"));
            }
        }
        Ok(Self { name, neighbors })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn neighbors(&self, c: char) -> Option<&[char]> {
        self.neighbors.get(&c).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = char> + '_ {
        self.neighbors.keys().copied()
    }

    /// US QWERTY letters and digits, with staggered-row adjacency. Uppercase
    /// letters neighbor the uppercase forms of their lowercase neighbors.
    pub fn qwerty() -> Self {
        const ROWS: [&str; 4] = ["1234567890", "qwertyuiop", "asdfghjkl", "zxcvbnm"];
        let grid: Vec<Vec<char>> = ROWS.iter().map(|r| r.chars().collect()).collect();
        let at = |r: isize, c: isize| -> Option<char> {
            let row = grid.get(usize::try_from(r).ok()?)?;
            row.get(usize::try_from(c).ok()?).copied()
        };
        let mut map = BTreeMap::new();
        for (r, row) in grid.iter().enumerate() {
            for (c, &key) in row.iter().enumerate() {
                let (r, c) = (r as isize, c as isize);
                let list: Vec<char> = [
                    at(r, c - 1),
                    at(r, c + 1),
                    at(r - 1, c),
                    at(r - 1, c + 1),
                    at(r + 1, c - 1),
                    at(r + 1, c),
                ]
                .into_iter()
                .flatten()
                .collect();
                if key.is_alphabetic() {
                    let upper: Vec<char> = list
                        .iter()
                        .filter(|n| n.is_alphabetic())
                        .map(|n| n.to_ascii_uppercase())
                        .collect();
                    map.insert(key.to_ascii_uppercase(), upper);
                }
                map.insert(key, list);
            }
        }
        Self::new("qwerty", map).expect("built-in layout is valid")
    }
}

/// Parses `{ "layout": { "a": ["q", "w", ...], ... }, ... }`. Blank input is
/// an empty list.
pub fn load_layouts(source: &str) -> Result<Vec<KeyboardLayout>> {
    if source.trim().is_empty() {
        return Ok(Vec::new());
    }
    let doc: BTreeMap<String, BTreeMap<String, Vec<String>>> =
        serde_json::from_str(source).map_err(|e| NoiseError::Parse(e.to_string()))?;
    let single = |layout: &str, key: &str, s: &str| -> Result<char> {
        let mut it = s.chars();
        match (it.next(), it.next()) {
            (Some(c), None) => Ok(c),
            _ => Err(NoiseError::Layout {
                layout: layout.into(),
                key: key.into(),
                reason: format!("{s:?} is not a single character"),
            }),
        }
    };
    doc.into_iter()
        .map(|(name, keys)| {
            let mut map = BTreeMap::new();
            for (key, list) in keys {
                let k = single(&name, &key, &key)?;
                let list = list
                    .iter()
                    .map(|s| single(&name, &key, s))
                    .collect::<Result<Vec<_>>>()?;
                map.insert(k, list);
            }
            KeyboardLayout::new(name, map)
        })
        .collect()
}

/// Serializes layouts in the format [`load_layouts`] reads.
pub fn layouts_to_json(layouts: &[KeyboardLayout]) -> String {
    let doc: BTreeMap<&str, BTreeMap<String, Vec<String>>> = layouts
        .iter()
        .map(|l| {
            let keys = l
                .neighbors
                .iter()
                .map(|(k, v)| (k.to_string(), v.iter().map(char::to_string).collect()))
                .collect();
            (l.name.as_str(), keys)
        })
        .collect();
    serde_json::to_string_pretty(&doc).expect("layout map serializes")
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub enabled_ops: Vec<NoiseOp>,
    pub layouts: Vec<KeyboardLayout>,
    pub punctuation_set: Vec<char>,
    pub min_length: usize,
    pub p_noise: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled_ops: NoiseOp::ALL.to_vec(),
            layouts: vec![KeyboardLayout::qwerty()],
            punctuation_set: DEFAULT_PUNCTUATION.to_vec(),
            min_length: DEFAULT_MIN_LENGTH,
            p_noise: DEFAULT_P_NOISE,
        }
    }
}

impl NoiseConfig {
    pub fn disabled() -> Self {
        Self {
            p_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NoiseError::InvalidConfig(m.into()));
        if self.min_length < 2 {
            return bad("min_length must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.p_noise) {
            return bad("p_noise must lie in [0, 1]");
        }
        if self.p_noise > 0.0 && self.enabled_ops.is_empty() {
            return bad("no noise ops enabled while p_noise > 0");
        }
        if self.enabled_ops.contains(&NoiseOp::Punctuation) && self.punctuation_set.is_empty() {
            return bad("punctuation op enabled with an empty punctuation set");
        }
        Ok(())
    }

    /// Every character an op may introduce: punctuation, layout keys and
    /// their neighbors.
    pub fn symbols(&self) -> BTreeSet<char> {
        let mut out: BTreeSet<char> = self.punctuation_set.iter().copied().collect();
        for l in &self.layouts {
            for (k, list) in &l.neighbors {
                out.insert(*k);
                out.extend(list.iter().copied());
            }
        }
        out
    }

    fn layout_keys(&self) -> Vec<char> {
        let keys: BTreeSet<char> = self.layouts.iter().flat_map(|l| l.keys()).collect();
        keys.into_iter().collect()
    }
}

/// Splits off the `##` marker, which is never edited.
fn editable(token: &str) -> (&str, Vec<char>) {
    match token.strip_prefix(MARKER) {
        Some(rest) => (MARKER, rest.chars().collect()),
        None => ("", token.chars().collect()),
    }
}

/// Number of characters noise may touch.
pub fn editable_len(token: &str) -> usize {
    editable(token).1.len()
}

fn toggled(c: char) -> Option<char> {
    fn single(mut it: impl Iterator<Item = char>) -> Option<char> {
        let first = it.next()?;
        it.next().is_none().then_some(first)
    }
    let t = if c.is_lowercase() {
        single(c.to_uppercase())
    } else if c.is_uppercase() {
        single(c.to_lowercase())
    } else {
        None
    };
    t.filter(|&t| t != c)
}

/// Applies one explicit edit to the editable region of `token`.
pub fn apply_edit(token: &str, edit: Edit) -> Result<String> {
    let (prefix, mut body) = editable(token);
    let len = body.len();
    let check = |pos: usize, limit: usize| {
        if pos < limit {
            Ok(())
        } else {
            Err(NoiseError::Position { pos, len })
        }
    };
    match edit {
        Edit::Mistype { pos, with } => {
            check(pos, len)?;
            body[pos] = with;
        }
        Edit::Repeat { pos } => {
            check(pos, len)?;
            body.insert(pos, body[pos]);
        }
        Edit::Swap { pos } => {
            check(pos + 1, len)?;
            body.swap(pos, pos + 1);
        }
        Edit::Drop { pos } => {
            check(pos, len)?;
            body.remove(pos);
        }
        Edit::Toggle { pos } => {
            check(pos, len)?;
            body[pos] = toggled(body[pos]).ok_or_else(|| NoiseError::NoEffect(token.into()))?;
        }
        Edit::Punctuation { pos, mark } => {
            check(pos, len + 1)?;
            body.insert(pos, mark);
        }
    }
    Ok(prefix.chars().chain(body).collect())
}

/// Draws an edit of kind `op` that changes `token`.
///
/// Ops that can leave a token unchanged (swap of equal neighbors, toggle of an
/// uncased character) sample only among the positions where they do change
/// it, which is the limit of retrying until a change occurs.
pub fn sample_edit<R: Rng + ?Sized>(
    token: &str,
    op: NoiseOp,
    rng: &mut R,
    config: &NoiseConfig,
) -> Result<Edit> {
    if is_special_token(token) {
        return Err(NoiseError::Special(token.into()));
    }
    let (_, body) = editable(token);
    let len = body.len();
    if len < config.min_length {
        return Err(NoiseError::TooShort {
            len,
            min: config.min_length,
        });
    }
    let no_effect = || NoiseError::NoEffect(token.into());
    Ok(match op {
        NoiseOp::Mistype => {
            let pos = rng.random_range(0..len);
            let c = body[pos];
            let holders: Vec<&KeyboardLayout> = config
                .layouts
                .iter()
                .filter(|l| l.neighbors(c).is_some())
                .collect();
            let with = match holders.choose(rng) {
                Some(layout) => *layout.neighbors(c).unwrap().choose(rng).unwrap(),
                None => {
                    let pool: Vec<char> =
                        config.layout_keys().into_iter().filter(|&k| k != c).collect();
                    *pool.choose(rng).ok_or(NoiseError::NoLayoutKeys)?
                }
            };
            Edit::Mistype { pos, with }
        }
        NoiseOp::Repeat => Edit::Repeat {
            pos: rng.random_range(0..len),
        },
        NoiseOp::Swap => {
            let candidates: Vec<usize> = (0..len - 1).filter(|&p| body[p] != body[p + 1]).collect();
            Edit::Swap {
                pos: *candidates.choose(rng).ok_or_else(no_effect)?,
            }
        }
        NoiseOp::Drop => Edit::Drop {
            pos: rng.random_range(0..len),
        },
        NoiseOp::Toggle => {
            let candidates: Vec<usize> = (0..len).filter(|&p| toggled(body[p]).is_some()).collect();
            Edit::Toggle {
                pos: *candidates.choose(rng).ok_or_else(no_effect)?,
            }
        }
        NoiseOp::Punctuation => {
            let pos = rng.random_range(0..=len);
            let mark = *config
                .punctuation_set
                .choose(rng)
                .ok_or_else(|| NoiseError::InvalidConfig("empty punctuation set".into()))?;
            Edit::Punctuation { pos, mark }
        }
    })
}

/// Applies one random edit of kind `op`; the result always differs from `token`.
pub fn apply_op<R: Rng + ?Sized>(
    token: &str,
    op: NoiseOp,
    rng: &mut R,
    config: &NoiseConfig,
) -> Result<String> {
    let edit = sample_edit(token, op, rng, config)?;
    apply_edit(token, edit)
}

/// Like [`sample_noisy`], also reporting which op fired.
pub fn sample_noisy_traced<R: Rng + ?Sized>(
    token: &str,
    rng: &mut R,
    config: &NoiseConfig,
) -> (String, Option<NoiseOp>) {
    if config.p_noise <= 0.0 || !rng.random_bool(config.p_noise.min(1.0)) {
        return (token.to_string(), None);
    }
    let Some(&op) = config.enabled_ops.choose(rng) else {
        return (token.to_string(), None);
    };
    match apply_op(token, op, rng, config) {
        Ok(noisy) => (noisy, Some(op)),
        Err(_) => (token.to_string(), None),
    }
}

/// With probability `p_noise`, one uniformly chosen enabled op; otherwise the
/// token itself. Tokens the op rejects pass through unchanged.
pub fn sample_noisy<R: Rng + ?Sized>(token: &str, rng: &mut R, config: &NoiseConfig) -> String {
    sample_noisy_traced(token, rng, config).0
}
