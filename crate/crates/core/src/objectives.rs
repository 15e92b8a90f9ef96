//! The frozen embedding table, its exact cosine neighbor index, and the four
//! simulation objectives with their analytic gradients with respect to ê.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::Exec;
use crate::numerics::{dot, log_sum_exp, norm, softmax_in_place, Matrix};

pub const TABLE_MAGIC: &[u8; 4] = b"EMBT";
pub const DEFAULT_NEIGHBOR_K: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("embedding table row {0} has zero norm")]
    ZeroNormRow(usize),
    #[error("zero-norm vector passed to a cosine objective")]
    ZeroVector,
    #[error("id {id} out of range for a table of {rows} rows")]
    IdOutOfRange { id: usize, rows: usize },
    #[error("vector width {got} does not match table width {expected}")]
    Width { expected: usize, got: usize },
    #[error("neighbor depth {k} is invalid for a table of {rows} rows")]
    BadK { k: usize, rows: usize },
    #[error("neighbor index covers {index_rows} rows but the table has {table_rows}")]
    IndexMismatch { index_rows: usize, table_rows: usize },
    #[error("loss weights must be non-negative with at least one positive")]
    InvalidWeights,
    #[error("table file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

/// The frozen `|V| × d` simulation target.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    matrix: Matrix,
    norms: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(matrix: Matrix) -> Result<Self> {
        let norms: Vec<f64> = (0..matrix.rows()).map(|r| norm(matrix.row(r))).collect();
        if let Some(bad) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
            return Err(ObjectiveError::ZeroNormRow(bad));
        }
        Ok(Self { matrix, norms })
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.matrix.row(id)
    }

    pub fn row_norm(&self, id: usize) -> f64 {
        self.norms[id]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    fn check_id(&self, id: usize) -> Result<()> {
        if id >= self.rows() {
            return Err(ObjectiveError::IdOutOfRange {
                id,
                rows: self.rows(),
            });
        }
        Ok(())
    }

    fn check_width(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(ObjectiveError::Width {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Cosine of `query` against every row.
    pub fn cosines(&self, query: &[f64]) -> Result<Vec<f64>> {
        self.check_width(query)?;
        let qn = norm(query);
        if qn == 0.0 {
            return Err(ObjectiveError::ZeroVector);
        }
        Ok((0..self.rows())
            .map(|i| dot(query, self.row(i)) / (qn * self.norms[i]))
            .collect())
    }

    /// The `k` rows closest to `query` by cosine, descending, ties by id.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        Ok(top_k_of(&self.cosines(query)?, k))
    }

    /// Text layout: `v d` header, then one whitespace-separated row per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.rows(), self.dim());
        for r in 0..self.rows() {
            let row: Vec<String> = self.row(r).iter().map(|x| x.to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// Binary layout: `EMBT`, u32 v, u32 d, row-major little-endian f32.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.matrix.data().len());
        out.extend_from_slice(TABLE_MAGIC);
        out.extend_from_slice(&(self.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for &x in self.matrix.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        out
    }

    /// Loads either layout, detected by the binary magic.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(TABLE_MAGIC) {
            Self::from_binary(bytes)
        } else {
            let text = std::str::from_utf8(bytes)
                .map_err(|e| ObjectiveError::Format(format!("not UTF-8 text: {e}")))?;
            Self::from_text(text)
        }
    }

    fn from_binary(bytes: &[u8]) -> Result<Self> {
        let header = |at: usize| -> Result<usize> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
                .ok_or_else(|| ObjectiveError::Format("truncated header".into()))
        };
        let (v, d) = (header(4)?, header(8)?);
        let payload = &bytes[12..];
        if payload.len() != v * d * 4 {
            return Err(ObjectiveError::Format(format!(
                "expected {} payload bytes for {v}x{d}, found {}",
                v * d * 4,
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(Matrix::new(v, d, data).map_err(|e| ObjectiveError::Format(e.to_string()))?)
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| ObjectiveError::Format("empty table file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| ObjectiveError::Format(format!("header {header:?}: {e}")))?;
        let [v, d] = dims[..] else {
            return Err(ObjectiveError::Format(format!("header {header:?} is not `v d`")));
        };
        let mut data = Vec::with_capacity(v * d);
        for (i, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| ObjectiveError::Format(format!("row {i}: {e}")))?;
            if row.len() != d {
                return Err(ObjectiveError::Format(format!(
                    "row {i} has {} values, expected {d}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        if data.len() != v * d {
            return Err(ObjectiveError::Format(format!(
                "expected {v} rows, found {}",
                data.len() / d.max(1)
            )));
        }
        Self::new(Matrix::new(v, d, data).map_err(|e| ObjectiveError::Format(e.to_string()))?)
    }

    /// SHA-256 over the row-major bit patterns, for frozen-table checks.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.rows() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        for x in self.matrix.data() {
            h.update(x.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

// Adding 0.0 folds -0.0 into 0.0 so that signed zeros still tie.
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    (b.1 + 0.0).total_cmp(&(a.1 + 0.0)).then(a.0.cmp(&b.0))
}

/// The `k` best `(id, score)` pairs of `scores`, descending, ties by id.
pub fn top_k_of(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    let k = k.min(all.len());
    if k == 0 {
        return Vec::new();
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, rank_order);
        all.truncate(k);
    }
    all.sort_by(rank_order);
    all
}

/// Exact top-k cosine neighbors of every table row, self included.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    k: usize,
    lists: Vec<Vec<usize>>,
}

impl NeighborIndex {
    pub fn build(table: &EmbeddingTable, k: usize, exec: Exec) -> Result<Self> {
        if k == 0 || k > table.rows() {
            return Err(ObjectiveError::BadK {
                k,
                rows: table.rows(),
            });
        }
        let lists = exec.map_range(table.rows(), |i| {
            let cos: Vec<f64> = (0..table.rows())
                .map(|j| dot(table.row(i), table.row(j)) / (table.norms[i] * table.norms[j]))
                .collect();
            top_k_of(&cos, k).into_iter().map(|(id, _)| id).collect()
        });
        Ok(Self { k, lists })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.lists.len()
    }

    pub fn neighbors(&self, id: usize) -> &[usize] {
        &self.lists[id]
    }

    /// The same index cut down to its first `k` neighbors per row.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k {
            return Err(ObjectiveError::BadK { k, rows: self.rows() });
        }
        Ok(Self {
            k,
            lists: self.lists.iter().map(|l| l[..k].to_vec()).collect(),
        })
    }
}

/// Weights of the four objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub cos: f64,
    pub ce: f64,
    pub l2: f64,
    pub nbr: f64,
    /// Use `‖e − ê‖²` instead of the Euclidean distance.
    pub squared_l2: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cos: 1.0,
            ce: 1.0,
            l2: 1.0,
            nbr: 1.0,
            squared_l2: false,
        }
    }
}

impl LossWeights {
    pub fn new(cos: f64, ce: f64, l2: f64, nbr: f64) -> Result<Self> {
        let w = Self {
            cos,
            ce,
            l2,
            nbr,
            squared_l2: false,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.cos, self.ce, self.l2, self.nbr];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || all.iter().all(|w| *w == 0.0) {
            return Err(ObjectiveError::InvalidWeights);
        }
        Ok(())
    }
}

/// Per-term values of one combined-loss evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cos: f64,
    pub ce: f64,
    pub l2: f64,
    pub nbr: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.cos += other.cos;
        self.ce += other.ce;
        self.l2 += other.l2;
        self.nbr += other.nbr;
        self.total += other.total;
    }

    pub fn scaled(mut self, f: f64) -> Self {
        self.cos *= f;
        self.ce *= f;
        self.l2 *= f;
        self.nbr *= f;
        self.total *= f;
        self
    }
}

fn cos_and_norms(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64)> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(ObjectiveError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb), na, nb))
}

/// `∂cos(x, n)/∂x`.
fn cos_grad_wrt_first(x: &[f64], n: &[f64]) -> Result<Vec<f64>> {
    let (c, nx, nn) = cos_and_norms(x, n)?;
    Ok(x.iter()
        .zip(n)
        .map(|(xi, ni)| ni / (nx * nn) - c * xi / (nx * nx))
        .collect())
}

/// `1 − cos(e, ê)`.
pub fn loss_cos(e: &[f64], e_hat: &[f64]) -> Result<f64> {
    Ok(1.0 - cos_and_norms(e, e_hat)?.0)
}

/// `−log softmax(ê·Eᵀ)[target]` with E frozen.
pub fn loss_ce(target: usize, e_hat: &[f64], table: &EmbeddingTable) -> Result<f64> {
    table.check_id(target)?;
    table.check_width(e_hat)?;
    let logits: Vec<f64> = (0..table.rows()).map(|i| dot(e_hat, table.row(i))).collect();
    Ok(log_sum_exp(&logits) - logits[target])
}

/// [`loss_ce`] together with `∂/∂ê = Eᵀ(softmax − onehot)`.
pub fn loss_ce_gradient(
    target: usize,
    e_hat: &[f64],
    table: &EmbeddingTable,
) -> Result<(f64, Vec<f64>)> {
    table.check_id(target)?;
    table.check_width(e_hat)?;
    let mut p: Vec<f64> = (0..table.rows()).map(|i| dot(e_hat, table.row(i))).collect();
    let loss = log_sum_exp(&p) - p[target];
    softmax_in_place(&mut p);
    p[target] -= 1.0;
    let mut g = vec![0.0; e_hat.len()];
    for (i, pi) in p.iter().enumerate() {
        for (gj, ej) in g.iter_mut().zip(table.row(i)) {
            *gj += pi * ej;
        }
    }
    Ok((loss, g))
}

/// Euclidean distance `‖e − ê‖`.
pub fn loss_l2(e: &[f64], e_hat: &[f64]) -> f64 {
    e.iter()
        .zip(e_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Mean squared difference of cosine distances to the target's stored neighbors.
pub fn loss_nbr(
    target: usize,
    e_hat: &[f64],
    table: &EmbeddingTable,
    index: &NeighborIndex,
) -> Result<f64> {
    check_index(target, table, index)?;
    let e = table.row(target);
    let nbrs = index.neighbors(target);
    let mut total = 0.0;
    for &n in nbrs {
        let d_true = 1.0 - cos_and_norms(e, table.row(n))?.0;
        let d_pred = 1.0 - cos_and_norms(e_hat, table.row(n))?.0;
        total += (d_true - d_pred).powi(2);
    }
    Ok(total / nbrs.len() as f64)
}

fn check_index(target: usize, table: &EmbeddingTable, index: &NeighborIndex) -> Result<()> {
    table.check_id(target)?;
    if index.rows() != table.rows() {
        return Err(ObjectiveError::IndexMismatch {
            index_rows: index.rows(),
            table_rows: table.rows(),
        });
    }
    Ok(())
}

/// Weighted sum of the four objectives plus each term on its own.
pub fn combined_loss(
    target: usize,
    e: &[f64],
    e_hat: &[f64],
    table: &EmbeddingTable,
    index: &NeighborIndex,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    Ok(evaluate(target, e, e_hat, table, index, w, false)?.0)
}

/// [`combined_loss`] together with `∂loss/∂ê`.
pub fn combined_loss_gradient(
    target: usize,
    e: &[f64],
    e_hat: &[f64],
    table: &EmbeddingTable,
    index: &NeighborIndex,
    w: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    evaluate(target, e, e_hat, table, index, w, true)
}

fn evaluate(
    target: usize,
    e: &[f64],
    e_hat: &[f64],
    table: &EmbeddingTable,
    index: &NeighborIndex,
    w: &LossWeights,
    with_grad: bool,
) -> Result<(LossBreakdown, Vec<f64>)> {
    w.validate()?;
    check_index(target, table, index)?;
    table.check_width(e)?;
    table.check_width(e_hat)?;
    let d = e_hat.len();
    let mut grad = vec![0.0; d];
    let mut add = |g: &[f64], weight: f64| {
        for (a, b) in grad.iter_mut().zip(g) {
            *a += weight * b;
        }
    };

    // cosine distance
    let cos = loss_cos(e, e_hat)?;
    if with_grad && w.cos > 0.0 {
        let g: Vec<f64> = cos_grad_wrt_first(e_hat, e)?.iter().map(|x| -x).collect();
        add(&g, w.cos);
    }

    // cross-entropy through the frozen projection
    let ce = if with_grad && w.ce > 0.0 {
        let (ce, g) = loss_ce_gradient(target, e_hat, table)?;
        add(&g, w.ce);
        ce
    } else {
        loss_ce(target, e_hat, table)?
    };

    // magnitude
    let dist = loss_l2(e, e_hat);
    let l2 = if w.squared_l2 { dist * dist } else { dist };
    if with_grad && w.l2 > 0.0 {
        let g: Vec<f64> = if w.squared_l2 {
            e_hat.iter().zip(e).map(|(a, b)| 2.0 * (a - b)).collect()
        } else if dist == 0.0 {
            vec![0.0; d]
        } else {
            e_hat.iter().zip(e).map(|(a, b)| (a - b) / dist).collect()
        };
        add(&g, w.l2);
    }

    // neighbor distance structure
    let nbrs = index.neighbors(target);
    let k = nbrs.len() as f64;
    let mut nbr = 0.0;
    let mut g_nbr = vec![0.0; d];
    for &n in nbrs {
        let row = table.row(n);
        let delta = (1.0 - cos_and_norms(e, row)?.0) - (1.0 - cos_and_norms(e_hat, row)?.0);
        nbr += delta * delta;
        if with_grad && w.nbr > 0.0 {
            // ∂(δ²)/∂ê = 2δ · ∂cos(ê, n)/∂ê
            for (gj, cj) in g_nbr.iter_mut().zip(cos_grad_wrt_first(e_hat, row)?) {
                *gj += 2.0 * delta * cj / k;
            }
        }
    }
    nbr /= k;
    add(&g_nbr, w.nbr);

    let total = w.cos * cos + w.ce * ce + w.l2 * l2 + w.nbr * nbr;
    Ok((
        LossBreakdown {
            cos,
            ce,
            l2,
            nbr,
            total,
        },
        grad,
    ))
}
