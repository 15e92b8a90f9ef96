//! Forward pass with attention-map capture, and its exact backward.
//!
//! Per layer, with `LN` the row-wise layer norm:
//!
//! ```text
//! X̄  = LN(X)                X'  = MultiHead(X̄) + X̄
//! X̄' = LN(X')               X⁺  = FFN(X̄') + X̄'
//! ```
//!
//! With `standard_preln` the residuals add `X` and `X'` instead. The head is
//! `LN(maxpool(X_l W_e + b_e))` with the max taken per output dimension.

use super::{Char2SubwordParams, Gradient, ModelError};
use crate::numerics::{
    gelu, gelu_grad, layer_norm_backward, layer_norm_forward, sinusoidal_pe, softmax_backward_row,
    softmax_in_place, LayerNormCache, Matrix,
};
use crate::vocab::CharSequence;

/// Attention probabilities, indexed `[layer][head]`, each `n × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    pub layers: Vec<Vec<Matrix>>,
}

impl AttentionMaps {
    pub fn count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone)]
struct HeadCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Matrix,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    ln1: Vec<LayerNormCache>,
    normed: Matrix,
    heads: Vec<HeadCache>,
    concat: Matrix,
    ln2: Vec<LayerNormCache>,
    normed_mid: Matrix,
    pre_act: Matrix,
    act: Matrix,
}

/// Activations retained for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    chars: Vec<usize>,
    layers: Vec<LayerCache>,
    top: Matrix,
    pool_rows: Vec<usize>,
    out_ln: LayerNormCache,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub embedding: Vec<f64>,
    pub maps: AttentionMaps,
    pub cache: ForwardCache,
}

fn ln_rows(x: &Matrix, gain: &Matrix, bias: &Matrix, eps: f64) -> Result<(Matrix, Vec<LayerNormCache>), ModelError> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut caches = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let (y, c) = layer_norm_forward(x.row(r), gain.data(), bias.data(), eps)?;
        out.row_mut(r).copy_from_slice(&y);
        caches.push(c);
    }
    Ok((out, caches))
}

fn ln_rows_backward(
    dy: &Matrix,
    gain: &Matrix,
    caches: &[LayerNormCache],
    dgain: &mut Matrix,
    dbias: &mut Matrix,
) -> Matrix {
    let mut dx = Matrix::zeros(dy.rows(), dy.cols());
    for (r, cache) in caches.iter().enumerate() {
        let (dxr, dg, db) = layer_norm_backward(dy.row(r), gain.data(), cache);
        dx.row_mut(r).copy_from_slice(&dxr);
        for (a, b) in dgain.data_mut().iter_mut().zip(&dg) {
            *a += b;
        }
        for (a, b) in dbias.data_mut().iter_mut().zip(&db) {
            *a += b;
        }
    }
    dx
}

fn add_into(target: &mut Matrix, m: &Matrix) {
    for (a, b) in target.data_mut().iter_mut().zip(m.data()) {
        *a += b;
    }
}

fn add_vec_into(target: &mut Matrix, v: &[f64]) {
    for (a, b) in target.data_mut().iter_mut().zip(v) {
        *a += b;
    }
}

/// Runs the module on one character sequence.
pub fn forward(params: &Char2SubwordParams, seq: &CharSequence) -> Result<ForwardOutput, ModelError> {
    let cfg = &params.config;
    let t = &params.tensors;
    let n = seq.chars.len();
    if n == 0 {
        return Err(ModelError::EmptySequence);
    }
    if n > cfg.max_chars {
        return Err(ModelError::TooLong {
            len: n,
            max: cfg.max_chars,
        });
    }
    let d = cfg.d_char;
    let dh = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();

    let mut x = Matrix::zeros(n, d);
    for (pos, &c) in seq.chars.iter().enumerate() {
        if c >= t.char_embeddings.rows() {
            return Err(ModelError::UnknownChar {
                index: c,
                size: t.char_embeddings.rows(),
            });
        }
        let pe = sinusoidal_pe(pos, d)?;
        for ((o, e), p) in x.row_mut(pos).iter_mut().zip(t.char_embeddings.row(c)).zip(&pe) {
            *o = e + p;
        }
    }

    let mut layer_caches = Vec::with_capacity(cfg.n_layers);
    let mut maps = Vec::with_capacity(cfg.n_layers);
    for layer in &t.layers {
        let (normed, ln1) = ln_rows(&x, &layer.ln1_gain, &layer.ln1_bias, cfg.ln_eps)?;
        let mut concat = Matrix::zeros(n, d);
        let mut heads = Vec::with_capacity(cfg.n_heads);
        let mut layer_maps = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let q = normed.matmul(&layer.wq[h])?;
            let k = normed.matmul(&layer.wk[h])?;
            let v = normed.matmul(&layer.wv[h])?;
            let mut probs = q.matmul_t(&k)?;
            probs.scale(scale);
            for r in 0..n {
                softmax_in_place(probs.row_mut(r));
            }
            concat.set_column_block(h * dh, &probs.matmul(&v)?);
            layer_maps.push(probs.clone());
            heads.push(HeadCache { q, k, v, probs });
        }
        let mut mid = concat.matmul(&layer.wo)?;
        add_into(&mut mid, if cfg.standard_preln { &x } else { &normed });

        let (normed_mid, ln2) = ln_rows(&mid, &layer.ln2_gain, &layer.ln2_bias, cfg.ln_eps)?;
        let mut pre_act = normed_mid.matmul(&layer.w1)?;
        pre_act.add_row_broadcast(layer.b1.data())?;
        let act = pre_act.map(gelu);
        let mut out = act.matmul(&layer.w2)?;
        out.add_row_broadcast(layer.b2.data())?;
        add_into(&mut out, if cfg.standard_preln { &mid } else { &normed_mid });

        layer_caches.push(LayerCache {
            input: std::mem::replace(&mut x, out),
            ln1,
            normed,
            heads,
            concat,
            ln2,
            normed_mid,
            pre_act,
            act,
        });
        maps.push(layer_maps);
    }

    let mut proj = x.matmul(&t.w_e)?;
    proj.add_row_broadcast(t.b_e.data())?;
    let mut pooled = vec![f64::NEG_INFINITY; cfg.d_out];
    let mut pool_rows = vec![0; cfg.d_out];
    for r in 0..n {
        for (c, &v) in proj.row(r).iter().enumerate() {
            if v > pooled[c] {
                pooled[c] = v;
                pool_rows[c] = r;
            }
        }
    }
    let (embedding, out_ln) = layer_norm_forward(
        &pooled,
        t.ln_out_gain.data(),
        t.ln_out_bias.data(),
        cfg.ln_eps,
    )?;

    Ok(ForwardOutput {
        embedding,
        maps: AttentionMaps { layers: maps },
        cache: ForwardCache {
            chars: seq.chars.clone(),
            layers: layer_caches,
            top: x,
            pool_rows,
            out_ln,
        },
    })
}

/// Gradient of `⟨upstream, ê⟩` with respect to every parameter tensor.
pub fn backward(
    params: &Char2SubwordParams,
    seq: &CharSequence,
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<Gradient, ModelError> {
    let cfg = &params.config;
    let t = &params.tensors;
    if cache.chars != seq.chars
        || cache.layers.len() != t.layers.len()
        || cache.top.cols() != cfg.d_char
        || cache.pool_rows.len() != cfg.d_out
    {
        return Err(ModelError::CacheMismatch);
    }
    if upstream.len() != cfg.d_out {
        return Err(ModelError::UpstreamLength {
            expected: cfg.d_out,
            got: upstream.len(),
        });
    }
    let n = seq.chars.len();
    let d = cfg.d_char;
    let dh = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let mut g = t.zeros_like();

    let (dpooled, dgain, dbias) = layer_norm_backward(upstream, t.ln_out_gain.data(), &cache.out_ln);
    add_vec_into(&mut g.ln_out_gain, &dgain);
    add_vec_into(&mut g.ln_out_bias, &dbias);

    let mut dproj = Matrix::zeros(n, cfg.d_out);
    for (c, (&r, &dp)) in cache.pool_rows.iter().zip(&dpooled).enumerate() {
        dproj[(r, c)] = dp;
    }
    g.w_e = cache.top.t_matmul(&dproj)?;
    add_vec_into(&mut g.b_e, &dproj.column_sums());
    let mut dx = dproj.matmul_t(&t.w_e)?;

    for (j, lc) in cache.layers.iter().enumerate().rev() {
        let layer = &t.layers[j];
        let gl = &mut g.layers[j];

        // FFN block
        let dffn = &dx;
        gl.w2 = lc.act.t_matmul(dffn)?;
        add_vec_into(&mut gl.b2, &dffn.column_sums());
        let dact = dffn.matmul_t(&layer.w2)?;
        let mut dpre = dact;
        for (dp, &z) in dpre.data_mut().iter_mut().zip(lc.pre_act.data()) {
            *dp *= gelu_grad(z);
        }
        gl.w1 = lc.normed_mid.t_matmul(&dpre)?;
        add_vec_into(&mut gl.b1, &dpre.column_sums());
        let mut dnormed_mid = dpre.matmul_t(&layer.w1)?;
        if !cfg.standard_preln {
            add_into(&mut dnormed_mid, &dx);
        }
        let mut dmid = ln_rows_backward(
            &dnormed_mid,
            &layer.ln2_gain,
            &lc.ln2,
            &mut gl.ln2_gain,
            &mut gl.ln2_bias,
        );
        if cfg.standard_preln {
            add_into(&mut dmid, &dx);
        }

        // attention block
        gl.wo = lc.concat.t_matmul(&dmid)?;
        let dconcat = dmid.matmul_t(&layer.wo)?;
        let mut dnormed = Matrix::zeros(n, d);
        for (h, hc) in lc.heads.iter().enumerate() {
            let dhead = dconcat.column_block(h * dh, dh);
            let dprobs = dhead.matmul_t(&hc.v)?;
            let dv = hc.probs.t_matmul(&dhead)?;
            let mut dscores = Matrix::zeros(n, n);
            for r in 0..n {
                let row = softmax_backward_row(hc.probs.row(r), dprobs.row(r));
                dscores.row_mut(r).copy_from_slice(&row);
            }
            dscores.scale(scale);
            let dq = dscores.matmul(&hc.k)?;
            let dk = dscores.t_matmul(&hc.q)?;
            gl.wq[h] = lc.normed.t_matmul(&dq)?;
            gl.wk[h] = lc.normed.t_matmul(&dk)?;
            gl.wv[h] = lc.normed.t_matmul(&dv)?;
            add_into(&mut dnormed, &dq.matmul_t(&layer.wq[h])?);
            add_into(&mut dnormed, &dk.matmul_t(&layer.wk[h])?);
            add_into(&mut dnormed, &dv.matmul_t(&layer.wv[h])?);
        }
        if !cfg.standard_preln {
            add_into(&mut dnormed, &dmid);
        }
        let mut dinput = ln_rows_backward(
            &dnormed,
            &layer.ln1_gain,
            &lc.ln1,
            &mut gl.ln1_gain,
            &mut gl.ln1_bias,
        );
        if cfg.standard_preln {
            add_into(&mut dinput, &dmid);
        }
        debug_assert_eq!(lc.input.shape(), dinput.shape());
        dx = dinput;
    }

    for (pos, &c) in seq.chars.iter().enumerate() {
        for (a, b) in g.char_embeddings.row_mut(c).iter_mut().zip(dx.row(pos)) {
            *a += b;
        }
    }
    Ok(g)
}
