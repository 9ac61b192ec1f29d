//! Pre-LN causal transformer forward pass and its reverse-mode gradient.
//!
//! Left-pad tokens are dropped before computation: positions are counted
//! from the first real token and the pad rows of the returned logits are
//! zero. A padded sequence therefore produces exactly the same real rows as
//! its unpadded form, and pads never receive gradient.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{LayerParams, Parameters};
use super::vocab::PAD;
use super::{ModelError, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.dot(&row) / d;
        *s = 1.0 / (var + LN_EPS).sqrt();
        let k = *s;
        row.mapv_inplace(|v| v * k);
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_back(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * gain;
    for ((mut row, xhat), &s) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_g = row.sum() / d;
        let mean_gx = row.dot(&xhat) / d;
        row.zip_mut_with(&xhat, |g, &xh| *g = s * (*g - mean_g - xh * mean_gx));
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

fn add_row_vec(mut m: Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    m += b;
    m
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    ln2: LnCache,
    b: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

/// Intermediate activations kept for [`backward`].
pub struct ForwardCache {
    start: usize,
    tokens: Vec<usize>,
    n_heads: usize,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    f: Array2<f64>,
}

impl ForwardCache {
    /// Index of the first non-pad token in the original sequence.
    pub fn start(&self) -> usize {
        self.start
    }
}

pub struct ForwardOutput {
    /// `T × V`; rows of left-pad positions are zero.
    pub logits: Array2<f64>,
    /// Final-norm hidden state at the last real position.
    pub hidden: Array1<f64>,
    pub cache: ForwardCache,
}

/// `(q, k, v, per-head attention weights, concatenated context)`.
type AttentionOut = (Array2<f64>, Array2<f64>, Array2<f64>, Vec<Array2<f64>>, Array2<f64>);

fn attention(a: &Array2<f64>, p: &LayerParams, n_heads: usize) -> AttentionOut {
    let n = a.nrows();
    let d = a.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = a.dot(&p.wq);
    let k = a.dot(&p.wk);
    let v = a.dot(&p.wv);
    let mut attn = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        for (i, mut row) in sc.rows_mut().into_iter().enumerate() {
            let max = row.slice(s![..=i]).fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut sum = 0.0;
            for (j, x) in row.iter_mut().enumerate() {
                if j <= i {
                    *x = (*x - max).exp();
                    sum += *x;
                } else {
                    *x = 0.0;
                }
            }
            row /= sum;
        }
        attn.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
        probs.push(sc);
    }
    (q, k, v, probs, attn)
}

/// Runs the model on `tokens`, which may start with pad tokens.
pub fn forward(params: &Parameters, tokens: &[usize]) -> Result<ForwardOutput> {
    if tokens.len() > params.max_seq() {
        return Err(ModelError::SequenceTooLong {
            len: tokens.len(),
            max: params.max_seq(),
        });
    }
    let start = tokens.iter().position(|&t| t != PAD).ok_or(ModelError::EmptySequence)?;
    let real = &tokens[start..];
    if real.contains(&PAD) {
        return Err(ModelError::InvalidTokens("pad token after the first real token".into()));
    }
    let vsize = params.vocab_size();
    if let Some(&bad) = real.iter().find(|&&t| t >= vsize) {
        return Err(ModelError::InvalidTokens(format!(
            "token id {bad} >= vocab size {vsize}"
        )));
    }
    let n = real.len();
    let d = params.d_model();
    let mut x = Array2::zeros((n, d));
    for (i, &t) in real.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.assign(&params.tok_emb.row(t));
        row += &params.pos_emb.row(i);
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    for p in &params.layers {
        let (a, ln1) = layer_norm(&x, &p.ln1_gain, &p.ln1_bias);
        let (q, k, v, probs, attn) = attention(&a, p, params.n_heads);
        x += &attn.dot(&p.wo);
        let (b, ln2) = layer_norm(&x, &p.ln2_gain, &p.ln2_bias);
        let u = add_row_vec(b.dot(&p.w1), &p.b1);
        let g = u.mapv(gelu);
        x += &add_row_vec(g.dot(&p.w2), &p.b2);
        layers.push(LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            attn,
            ln2,
            b,
            u,
            g,
        });
    }
    let (f, lnf) = layer_norm(&x, &params.lnf_gain, &params.lnf_bias);
    let real_logits = add_row_vec(f.dot(&params.w_out), &params.b_out);
    let mut logits = Array2::zeros((tokens.len(), vsize));
    logits.slice_mut(s![start.., ..]).assign(&real_logits);
    let hidden = f.row(n - 1).to_owned();
    Ok(ForwardOutput {
        logits,
        hidden,
        cache: ForwardCache {
            start,
            tokens: real.to_vec(),
            n_heads: params.n_heads,
            layers,
            lnf,
            f,
        },
    })
}

fn accumulate_outer(dst: &mut Array2<f64>, a: ArrayView2<f64>, b: ArrayView2<f64>) {
    // dst += aᵀ b
    ndarray::linalg::general_mat_mul(1.0, &a.t(), &b, 1.0, dst);
}

/// Accumulates into `grads` the gradient of a scalar whose derivative with
/// respect to the full `T × V` logits is `dlogits` and with respect to the
/// returned hidden vector is `dhidden`. Pad rows of `dlogits` are ignored.
pub fn backward(
    params: &Parameters,
    cache: &ForwardCache,
    dlogits: &Array2<f64>,
    dhidden: Option<ArrayView1<f64>>,
    grads: &mut Parameters,
) {
    let n = cache.tokens.len();
    let dl = dlogits.slice(s![cache.start.., ..]);
    accumulate_outer(&mut grads.w_out, cache.f.view(), dl);
    grads.b_out += &dl.sum_axis(Axis(0));
    let mut df = dl.dot(&params.w_out.t());
    if let Some(dh) = dhidden {
        let mut last = df.row_mut(n - 1);
        last += &dh;
    }
    let mut dx = layer_norm_back(
        &df,
        &cache.lnf,
        &params.lnf_gain,
        &mut grads.lnf_gain,
        &mut grads.lnf_bias,
    );

    let d = params.d_model();
    let dh = d / cache.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    for ((p, c), g) in params
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        // MLP block
        accumulate_outer(&mut g.w2, c.g.view(), dx.view());
        g.b2 += &dx.sum_axis(Axis(0));
        let mut du = dx.dot(&p.w2.t());
        du.zip_mut_with(&c.u, |x, &u| *x *= gelu_grad(u));
        accumulate_outer(&mut g.w1, c.b.view(), du.view());
        g.b1 += &du.sum_axis(Axis(0));
        let db = du.dot(&p.w1.t());
        dx += &layer_norm_back(&db, &c.ln2, &p.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);

        // attention block
        accumulate_outer(&mut g.wo, c.attn.view(), dx.view());
        let dattn = dx.dot(&p.wo.t());
        let mut dq = Array2::zeros((n, d));
        let mut dk = Array2::zeros((n, d));
        let mut dv = Array2::zeros((n, d));
        for (h, probs) in c.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dout = dattn.slice(cols);
            let mut dp = dout.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&probs.t().dot(&dout));
            for (mut drow, prow) in dp.rows_mut().into_iter().zip(probs.rows()) {
                let dot = drow.dot(&prow);
                drow.zip_mut_with(&prow, |x, &pr| *x = pr * (*x - dot) * scale);
            }
            dq.slice_mut(cols).assign(&dp.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&dp.t().dot(&c.q.slice(cols)));
        }
        accumulate_outer(&mut g.wq, c.a.view(), dq.view());
        accumulate_outer(&mut g.wk, c.a.view(), dk.view());
        accumulate_outer(&mut g.wv, c.a.view(), dv.view());
        let da = dq.dot(&p.wq.t()) + dk.dot(&p.wk.t()) + dv.dot(&p.wv.t());
        dx += &layer_norm_back(&da, &c.ln1, &p.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
    }

    for (i, &t) in cache.tokens.iter().enumerate() {
        let row = dx.row(i);
        let mut te = grads.tok_emb.row_mut(t);
        te += &row;
        let mut pe = grads.pos_emb.row_mut(i);
        pe += &row;
    }
}
