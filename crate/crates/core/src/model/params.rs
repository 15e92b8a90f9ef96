use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Per-head projections, each `d′ × d′/k`.
    pub wq: Vec<Matrix>,
    pub wk: Vec<Matrix>,
    pub wv: Vec<Matrix>,
    pub wo: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

/// Every trainable tensor of the module. Gradients share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensors {
    pub char_embeddings: Matrix,
    pub layers: Vec<LayerParams>,
    pub w_e: Matrix,
    pub b_e: Matrix,
    pub ln_out_gain: Matrix,
    pub ln_out_bias: Matrix,
}

pub type Gradient = ParamTensors;

#[derive(Debug, Clone, PartialEq)]
pub struct Char2SubwordParams {
    pub config: ModelConfig,
    pub tensors: ParamTensors,
}

impl LayerParams {
    fn named(&self, prefix: &str) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (kind, heads) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv)] {
            for (h, m) in heads.iter().enumerate() {
                out.push((format!("{prefix}.head{h}.{kind}"), m));
            }
        }
        for (name, m) in [
            ("wo", &self.wo),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ] {
            out.push((format!("{prefix}.{name}"), m));
        }
        out
    }

    fn all_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        out.extend(self.wq.iter_mut());
        out.extend(self.wk.iter_mut());
        out.extend(self.wv.iter_mut());
        out.extend([
            &mut self.wo,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]);
        out
    }
}

impl ParamTensors {
    /// Zero tensors shaped for `config` and an alphabet of `alphabet_size`.
    pub fn zeros(config: &ModelConfig, alphabet_size: usize) -> Self {
        let d = config.d_char;
        let dh = config.head_dim();
        let heads = || vec![Matrix::zeros(d, dh); config.n_heads];
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                wq: heads(),
                wk: heads(),
                wv: heads(),
                wo: Matrix::zeros(d, d),
                w1: Matrix::zeros(d, 4 * d),
                b1: Matrix::zeros(1, 4 * d),
                w2: Matrix::zeros(4 * d, d),
                b2: Matrix::zeros(1, d),
                ln1_gain: Matrix::zeros(1, d),
                ln1_bias: Matrix::zeros(1, d),
                ln2_gain: Matrix::zeros(1, d),
                ln2_bias: Matrix::zeros(1, d),
            })
            .collect();
        Self {
            char_embeddings: Matrix::zeros(alphabet_size, d),
            layers,
            w_e: Matrix::zeros(d, config.d_out),
            b_e: Matrix::zeros(1, config.d_out),
            ln_out_gain: Matrix::zeros(1, config.d_out),
            ln_out_bias: Matrix::zeros(1, config.d_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for m in out.all_mut() {
            m.data_mut().fill(0.0);
        }
        out
    }

    /// Tensors with stable dotted names, in serialization order.
    pub fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("char_embeddings".to_string(), &self.char_embeddings)];
        for (j, layer) in self.layers.iter().enumerate() {
            out.extend(layer.named(&format!("layer{j}")));
        }
        out.push(("w_e".into(), &self.w_e));
        out.push(("b_e".into(), &self.b_e));
        out.push(("ln_out_gain".into(), &self.ln_out_gain));
        out.push(("ln_out_bias".into(), &self.ln_out_bias));
        out
    }

    /// Mutable tensors in the same order as [`ParamTensors::named`].
    pub fn all_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.char_embeddings];
        for layer in &mut self.layers {
            out.extend(layer.all_mut());
        }
        out.extend([
            &mut self.w_e,
            &mut self.b_e,
            &mut self.ln_out_gain,
            &mut self.ln_out_bias,
        ]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, m)| m.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.is_finite())
    }

    /// Elementwise `self += other`. Both sides must come from the same config.
    pub fn accumulate(&mut self, other: &ParamTensors) {
        let others = other.named();
        for (m, (_, o)) in self.all_mut().into_iter().zip(others) {
            for (a, b) in m.data_mut().iter_mut().zip(o.data()) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for m in self.all_mut() {
            m.scale(factor);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.named()
            .iter()
            .flat_map(|(_, m)| m.data().iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.named()
            .iter()
            .flat_map(|(_, m)| m.data().iter().copied())
            .collect()
    }

    /// Inverse of [`ParamTensors::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for m in self.all_mut() {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter vector has the wrong length");
    }
}

fn xavier(rng: &mut ChaCha8Rng, m: &mut Matrix) {
    let bound = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
    for x in m.data_mut() {
        *x = rng.random_range(-bound..bound);
    }
}

/// Xavier-uniform weights, zero biases, unit layer-norm gains.
pub fn init_params(
    config: &ModelConfig,
    alphabet_size: usize,
    seed: u64,
) -> Result<Char2SubwordParams, ModelError> {
    config.validate()?;
    let mut t = ParamTensors::zeros(config, alphabet_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier(&mut rng, &mut t.char_embeddings);
    for layer in &mut t.layers {
        for m in layer.wq.iter_mut().chain(&mut layer.wk).chain(&mut layer.wv) {
            xavier(&mut rng, m);
        }
        for m in [&mut layer.wo, &mut layer.w1, &mut layer.w2] {
            xavier(&mut rng, m);
        }
        layer.ln1_gain.data_mut().fill(1.0);
        layer.ln2_gain.data_mut().fill(1.0);
    }
    xavier(&mut rng, &mut t.w_e);
    t.ln_out_gain.data_mut().fill(1.0);
    Ok(Char2SubwordParams {
        config: config.clone(),
        tensors: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = ModelConfig::toy(16);
        let a = init_params(&cfg, 20, 7).unwrap();
        let b = init_params(&cfg, 20, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(&cfg, 20, 8).unwrap());

        let t = &a.tensors;
        for layer in &t.layers {
            for bias in [&layer.b1, &layer.b2, &layer.ln1_bias, &layer.ln2_bias] {
                assert!(bias.data().iter().all(|&x| x == 0.0));
            }
            assert!(layer.ln1_gain.data().iter().all(|&x| x == 1.0));
        }
        assert!(t.b_e.data().iter().all(|&x| x == 0.0));

        let mut checked = 0;
        for (name, m) in t.named() {
            let is_bias = name.ends_with("b1") || name.ends_with("b2") || name == "b_e";
            if is_bias || name.contains("ln") {
                continue;
            }
            let bound = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
            for &x in m.data() {
                assert!(x.abs() <= bound, "{name}");
                checked += 1;
            }
        }
        assert!(checked >= 1000, "only {checked} entries sampled");
    }

    #[test]
    fn flatten_round_trip() {
        let p = init_params(&ModelConfig::toy(6), 9, 1).unwrap();
        let flat = p.tensors.flatten();
        let mut q = p.tensors.zeros_like();
        q.assign_flat(&flat);
        assert_eq!(q, p.tensors);
    }
}
