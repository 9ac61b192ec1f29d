use ndarray::{Array1, Array2};

use super::{ModelConfig, ModelError, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// All trainable tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    /// Attention heads; shape metadata, not trained.
    pub n_heads: usize,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: Array1<f64>,
    pub lnf_bias: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

fn uniform2(rng: &mut SeededRng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.uniform(-bound, bound))
}

impl LayerParams {
    fn zeros(d: usize, d_ff: usize) -> Self {
        Self {
            ln1_gain: Array1::zeros(d),
            ln1_bias: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            ln2_gain: Array1::zeros(d),
            ln2_bias: Array1::zeros(d),
            w1: Array2::zeros((d, d_ff)),
            b1: Array1::zeros(d_ff),
            w2: Array2::zeros((d_ff, d)),
            b2: Array1::zeros(d),
        }
    }
}

impl Parameters {
    /// Scaled-uniform initialization: every weight matrix draws from
    /// `±1/√fan_in`, embeddings from `±1/√d_model`, gains start at one and
    /// biases at zero.
    pub fn init(config: &ModelConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if vocab_size < 4 {
            return Err(ModelError::InvalidConfig(format!("vocab size {vocab_size} < 4")));
        }
        let (d, f) = (config.d_model, config.d_ff);
        let mut rng = SeededRng::new(config.init_seed);
        let tok_emb = uniform2(&mut rng, vocab_size, d, d);
        let pos_emb = uniform2(&mut rng, config.max_seq, d, d);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                wq: uniform2(&mut rng, d, d, d),
                wk: uniform2(&mut rng, d, d, d),
                wv: uniform2(&mut rng, d, d, d),
                wo: uniform2(&mut rng, d, d, d),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
                w1: uniform2(&mut rng, d, f, d),
                b1: Array1::zeros(f),
                w2: uniform2(&mut rng, f, d, f),
                b2: Array1::zeros(d),
            })
            .collect();
        let w_out = uniform2(&mut rng, d, vocab_size, d);
        Ok(Self {
            n_heads: config.n_heads,
            tok_emb,
            pos_emb,
            layers,
            lnf_gain: Array1::ones(d),
            lnf_bias: Array1::zeros(d),
            w_out,
            b_out: Array1::zeros(vocab_size),
        })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let d = self.d_model();
        let f = self.layers.first().map_or(0, |l| l.b1.len());
        Self {
            n_heads: self.n_heads,
            tok_emb: Array2::zeros(self.tok_emb.dim()),
            pos_emb: Array2::zeros(self.pos_emb.dim()),
            layers: (0..self.layers.len()).map(|_| LayerParams::zeros(d, f)).collect(),
            lnf_gain: Array1::zeros(d),
            lnf_bias: Array1::zeros(d),
            w_out: Array2::zeros(self.w_out.dim()),
            b_out: Array1::zeros(self.b_out.len()),
        }
    }

    pub fn d_model(&self) -> usize {
        self.tok_emb.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.tok_emb.nrows()
    }

    pub fn max_seq(&self) -> usize {
        self.pos_emb.nrows()
    }

    /// Tensor names in canonical order.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["tok_emb".to_string(), "pos_emb".to_string()];
        for i in 0..self.layers.len() {
            for n in [
                "ln1_gain", "ln1_bias", "wq", "wk", "wv", "wo", "ln2_gain", "ln2_bias", "w1", "b1", "w2", "b2",
            ] {
                names.push(format!("layers.{i}.{n}"));
            }
        }
        names.extend(["lnf_gain", "lnf_bias", "w_out", "b_out"].map(String::from));
        names
    }

    /// `(shape, data)` of every tensor in canonical order.
    pub fn tensors(&self) -> Vec<(Vec<usize>, &[f64])> {
        fn m(a: &Array2<f64>) -> (Vec<usize>, &[f64]) {
            (a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        fn v(a: &Array1<f64>) -> (Vec<usize>, &[f64]) {
            (a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        let mut out = vec![m(&self.tok_emb), m(&self.pos_emb)];
        for l in &self.layers {
            out.extend([
                v(&l.ln1_gain),
                v(&l.ln1_bias),
                m(&l.wq),
                m(&l.wk),
                m(&l.wv),
                m(&l.wo),
                v(&l.ln2_gain),
                v(&l.ln2_bias),
                m(&l.w1),
                v(&l.b1),
                m(&l.w2),
                v(&l.b2),
            ]);
        }
        out.extend([v(&self.lnf_gain), v(&self.lnf_bias), m(&self.w_out), v(&self.b_out)]);
        out
    }

    /// Mutable data of every tensor in canonical order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        fn m(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        fn v(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        let mut out = vec![m(&mut self.tok_emb), m(&mut self.pos_emb)];
        for l in &mut self.layers {
            out.push(v(&mut l.ln1_gain));
            out.push(v(&mut l.ln1_bias));
            out.push(m(&mut l.wq));
            out.push(m(&mut l.wk));
            out.push(m(&mut l.wv));
            out.push(m(&mut l.wo));
            out.push(v(&mut l.ln2_gain));
            out.push(v(&mut l.ln2_bias));
            out.push(m(&mut l.w1));
            out.push(v(&mut l.b1));
            out.push(m(&mut l.w2));
            out.push(v(&mut l.b2));
        }
        out.push(v(&mut self.lnf_gain));
        out.push(v(&mut self.lnf_bias));
        out.push(m(&mut self.w_out));
        out.push(v(&mut self.b_out));
        out
    }

    pub fn num_entries(&self) -> usize {
        self.tensors().iter().map(|(_, d)| d.len()).sum()
    }

    /// Entry `index` of the flattened canonical parameter vector.
    pub fn entry_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for t in self.tensors_mut() {
            if index < t.len() {
                return Some(&mut t[index]);
            }
            index -= t.len();
        }
        None
    }

    pub fn entry(&self, index: usize) -> Option<f64> {
        let mut i = index;
        for (_, t) in self.tensors() {
            if i < t.len() {
                return Some(t[i]);
            }
            i -= t.len();
        }
        None
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, d)| d.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, d)| d.iter())
            .fold(0.0, |m, &x| m.max(x.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig::tiny()
    }

    #[test]
    fn names_and_tensors_align() {
        let p = Parameters::init(&tiny(), 12).unwrap();
        let names = p.names();
        let tensors = p.tensors();
        assert_eq!(names.len(), tensors.len());
        let idx = names.iter().position(|n| n == "lnf_gain").unwrap();
        assert_eq!(tensors[idx].0, vec![8]);
        assert!(tensors[idx].1.iter().all(|&g| g == 1.0));
        assert_eq!(tensors.last().unwrap().0, vec![12]);
        assert_eq!(names.last().unwrap(), "b_out");
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = Parameters::init(&tiny(), 12).unwrap();
        let b = Parameters::init(&tiny(), 12).unwrap();
        assert_eq!(a, b);
        let c = Parameters::init(&ModelConfig { init_seed: 7, ..tiny() }, 12).unwrap();
        assert_ne!(a, c);
        let bound = 1.0 / (8f64).sqrt();
        assert!(a.layers[0].wq.iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn entry_indexing_covers_everything() {
        let mut p = Parameters::init(&tiny(), 12).unwrap();
        let n = p.num_entries();
        assert!(p.entry(n).is_none());
        *p.entry_mut(n - 1).unwrap() = 5.0;
        assert_eq!(p.b_out[11], 5.0);
        *p.entry_mut(0).unwrap() = -3.0;
        assert_eq!(p.tok_emb[[0, 0]], -3.0);
    }

    #[test]
    fn add_scaled_and_zeros() {
        let p = Parameters::init(&tiny(), 12).unwrap();
        let mut z = p.zeros_like();
        assert_eq!(z.max_abs(), 0.0);
        z.add_scaled(&p, 2.0);
        assert_eq!(z.w_out[[1, 2]], 2.0 * p.w_out[[1, 2]]);
    }
}
