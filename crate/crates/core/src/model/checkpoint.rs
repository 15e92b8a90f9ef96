//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! "C2SW" | u32 version
//! u32 d_char | u32 d_out | u32 n_layers | u32 n_heads | u32 max_chars
//! f64 ln_eps | u8 standard_preln | u8 marker_on_full_words
//! u32 alphabet_len | alphabet_len × u32 code point
//! u32 tensor_count | tensor_count × (u32 name_len, name, u32 rows, u32 cols)
//! payloads: row-major f64 per tensor, manifest order
//! ```

use std::io::{Read, Write};

use super::{Char2Subword, Char2SubwordParams, ModelConfig, ModelError, ParamTensors};
use crate::vocab::CharAlphabet;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"C2SW";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<(), ModelError> {
    let v = u32::try_from(v).map_err(|_| ModelError::Checkpoint(format!("{v} overflows u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn save_checkpoint(model: &Char2Subword, mut w: impl Write) -> Result<(), ModelError> {
    let cfg = &model.params.config;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for v in [cfg.d_char, cfg.d_out, cfg.n_layers, cfg.n_heads, cfg.max_chars] {
        put_u32(&mut w, v)?;
    }
    w.write_all(&cfg.ln_eps.to_le_bytes())?;
    w.write_all(&[cfg.standard_preln as u8, cfg.marker_on_full_words as u8])?;

    let chars = model.alphabet.ordinary_chars();
    put_u32(&mut w, chars.len())?;
    for &c in chars {
        w.write_all(&(c as u32).to_le_bytes())?;
    }

    let named = model.params.tensors.named();
    put_u32(&mut w, named.len())?;
    for (name, m) in &named {
        put_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, m.rows())?;
        put_u32(&mut w, m.cols())?;
    }
    for (_, m) in &named {
        for x in m.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| ModelError::Checkpoint(format!("truncated file: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.bytes::<1>()?[0])
    }
}

pub fn load_checkpoint(r: impl Read) -> Result<Char2Subword, ModelError> {
    let mut r = Reader { inner: r };
    if &r.bytes::<4>()? != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic, not a C2SW file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let config = ModelConfig {
        d_char: r.u32()?,
        d_out: r.u32()?,
        n_layers: r.u32()?,
        n_heads: r.u32()?,
        max_chars: r.u32()?,
        ln_eps: r.f64()?,
        standard_preln: r.u8()? != 0,
        marker_on_full_words: r.u8()? != 0,
    };
    config.validate()?;

    let n_chars = r.u32()?;
    let mut chars = Vec::with_capacity(n_chars.min(1 << 16));
    for _ in 0..n_chars {
        let cp = r.u32()? as u32;
        chars.push(
            char::from_u32(cp)
                .ok_or_else(|| ModelError::Checkpoint(format!("invalid code point {cp:#x}")))?,
        );
    }
    let alphabet = CharAlphabet::new(chars);
    if alphabet.ordinary_chars().len() != n_chars {
        return Err(ModelError::Checkpoint("alphabet contains duplicates".into()));
    }

    let mut tensors = ParamTensors::zeros(&config, alphabet.size());
    let expected: Vec<(String, (usize, usize))> = tensors
        .named()
        .into_iter()
        .map(|(n, m)| (n, m.shape()))
        .collect();
    let count = r.u32()?;
    if count != expected.len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} tensors, manifest lists {count}",
            expected.len()
        )));
    }
    for (name, shape) in &expected {
        let len = r.u32()?;
        let mut buf = vec![0u8; len];
        r.inner
            .read_exact(&mut buf)
            .map_err(|e| ModelError::Checkpoint(format!("truncated manifest: {e}")))?;
        let got = String::from_utf8_lossy(&buf);
        let dims = (r.u32()?, r.u32()?);
        if got != name.as_str() || dims != *shape {
            return Err(ModelError::Checkpoint(format!(
                "manifest entry {got} {}x{} does not match expected {name} {}x{}",
                dims.0, dims.1, shape.0, shape.1
            )));
        }
    }
    for m in tensors.all_mut() {
        for x in m.data_mut() {
            *x = r.f64()?;
        }
    }
    if !tensors.is_finite() {
        return Err(ModelError::Checkpoint("non-finite parameter values".into()));
    }
    Ok(Char2Subword {
        params: Char2SubwordParams { config, tensors },
        alphabet,
    })
}
