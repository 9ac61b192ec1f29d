//! Label-masked distribution kernels and the contrastive objective.
//!
//! All kernels work on raw logits. For an input `prompt ⊕ label` of length
//! `T = prompt_len + label_len`, the rows that predict the label tokens are
//! `prompt_len - 1 ..= prompt_len + label_len - 2` (next-token alignment).
//! The CoIPO loss compares, on those rows only, the noisy prompt's
//! distributions against a same-task clean prompt and an unrelated clean
//! prompt:
//!
//! ```text
//! pull  = Σ_t KL(p_t(noisy) ‖ p_t(clean_same))
//! push  = Σ_t KL(p_t(noisy) ‖ p_t(clean_other))
//! coipo = pull − push
//! ΔĨ    = push − pull          (so coipo == −ΔĨ exactly)
//! ```
//!
//! The noisy side is the reference distribution and is held constant when
//! differentiating; gradients flow into the two clean-prompt logit matrices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("invalid length: prompt_len={prompt_len}, label_len={label_len}")]
    InvalidLength { prompt_len: usize, label_len: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("logits contain a non-finite value")]
    NonFinite,
    #[error("zero vector passed to cosine similarity")]
    ZeroVector,
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Per-position raw scores for a `prompt ⊕ label` sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    values: Array2<f64>,
    prompt_len: usize,
    label_len: usize,
}

impl LogitMatrix {
    pub fn new(values: Array2<f64>, prompt_len: usize, label_len: usize) -> Result<Self> {
        if values.nrows() != prompt_len + label_len {
            return Err(LossError::DimensionMismatch(format!(
                "{} rows but prompt_len + label_len = {}",
                values.nrows(),
                prompt_len + label_len
            )));
        }
        if values.ncols() == 0 {
            return Err(LossError::DimensionMismatch("empty vocabulary".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LossError::NonFinite);
        }
        Ok(Self {
            values,
            prompt_len,
            label_len,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], prompt_len: usize, label_len: usize) -> Result<Self> {
        let v = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != v) {
            return Err(LossError::DimensionMismatch("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((rows.len(), v), flat).expect("shape checked");
        Self::new(values, prompt_len, label_len)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn seq_len(&self) -> usize {
        self.values.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.values.ncols()
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn label_len(&self) -> usize {
        self.label_len
    }
}

/// Sequence positions whose next-token distributions predict label tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMask {
    positions: Vec<usize>,
}

impl LabelMask {
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, row: usize) -> bool {
        self.positions.binary_search(&row).is_ok()
    }

    fn check(&self, logits: &LogitMatrix) -> Result<()> {
        if self.positions.len() != logits.label_len {
            return Err(LossError::DimensionMismatch(format!(
                "mask has {} positions, logits have label_len {}",
                self.positions.len(),
                logits.label_len
            )));
        }
        match (self.positions.first(), self.positions.last()) {
            (Some(&first), Some(&last)) if first + 1 == logits.prompt_len && last < logits.seq_len() => Ok(()),
            _ => Err(LossError::DimensionMismatch(format!(
                "mask does not cover the label rows of a {}+{} sequence",
                logits.prompt_len, logits.label_len
            ))),
        }
    }
}

pub fn label_mask(prompt_len: usize, label_len: usize) -> Result<LabelMask> {
    if prompt_len < 1 || label_len < 1 {
        return Err(LossError::InvalidLength { prompt_len, label_len });
    }
    Ok(LabelMask {
        positions: (prompt_len - 1..prompt_len + label_len - 1).collect(),
    })
}

/// Softmax rows of the masked logits, in mask order.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionRows {
    rows: Array2<f64>,
}

impl DistributionRows {
    /// Wraps probability rows; each must be non-negative and sum to one.
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        for row in rows.rows() {
            let s: f64 = row.sum();
            if row.iter().any(|&p| p.is_nan() || p < 0.0) || (s - 1.0).abs() > 1e-9 {
                return Err(LossError::DimensionMismatch(
                    "row is not a probability distribution".into(),
                ));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn shape(&self) -> (usize, usize) {
        self.rows.dim()
    }
}

pub fn softmax_row(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut out = logits.mapv(|x| (x - max).exp());
    let sum = out.sum();
    out /= sum;
    out
}

pub fn log_softmax_row(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lse = logits.fold(0.0, |acc, &x| acc + (x - max).exp()).ln() + max;
    logits.mapv(|x| x - lse)
}

pub fn masked_distributions(logits: &LogitMatrix, mask: &LabelMask) -> Result<DistributionRows> {
    mask.check(logits)?;
    let mut rows = Array2::zeros((mask.len(), logits.vocab_size()));
    for (i, &t) in mask.positions.iter().enumerate() {
        rows.row_mut(i).assign(&softmax_row(logits.values.row(t)));
    }
    Ok(DistributionRows { rows })
}

fn check_same_shape(a: &DistributionRows, b: &DistributionRows) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(LossError::DimensionMismatch(format!(
            "distribution shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn row_kl(r_row: ArrayView1<f64>, c_row: ArrayView1<f64>, floor: f64) -> f64 {
    let mut sum = 0.0;
    for (&p, &q) in r_row.iter().zip(c_row.iter()) {
        if p > 0.0 {
            sum += p * (p.max(floor) / q.max(floor)).ln();
        }
    }
    sum
}

/// `Σ_t max(0, Σ_v ref[t,v] · ln(max(ref[t,v], floor) / max(cand[t,v], floor)))`;
/// zero-probability reference entries contribute nothing. The per-row clamp
/// only removes rounding and floor residue of order `floor`.
pub fn seq_kl_with_floor(reference: &DistributionRows, cand: &DistributionRows, floor: f64) -> Result<f64> {
    check_same_shape(reference, cand)?;
    let mut total = 0.0;
    for (r_row, c_row) in reference.rows.rows().into_iter().zip(cand.rows.rows()) {
        total += row_kl(r_row, c_row, floor).max(0.0);
    }
    Ok(total)
}

pub fn seq_kl(reference: &DistributionRows, cand: &DistributionRows) -> Result<f64> {
    seq_kl_with_floor(reference, cand, DEFAULT_PROB_FLOOR)
}

/// Gradient of `seq_kl(reference, softmax(z))` with respect to the logits `z`
/// of the candidate rows (reference held constant). Row `i` of the result
/// belongs to mask position `i`.
///
/// Entries whose probability sits below `floor` are constant in the loss, so
/// for row `t`: `∂/∂z_j = q_j · Σ_{v active} p_v − p_j · [j active]`. Rows
/// clamped to zero in [`seq_kl_with_floor`] get a zero gradient.
pub fn seq_kl_grad(reference: &DistributionRows, cand: &DistributionRows, floor: f64) -> Result<Array2<f64>> {
    check_same_shape(reference, cand)?;
    let mut grad = Array2::zeros(cand.shape());
    for ((r_row, c_row), mut g_row) in reference
        .rows
        .rows()
        .into_iter()
        .zip(cand.rows.rows())
        .zip(grad.rows_mut())
    {
        if row_kl(r_row, c_row, floor) < 0.0 {
            continue;
        }
        let active_mass: f64 = r_row
            .iter()
            .zip(c_row.iter())
            .filter(|(&p, &q)| p > 0.0 && q > floor)
            .map(|(&p, _)| p)
            .sum();
        for ((g, &p), &q) in g_row.iter_mut().zip(r_row.iter()).zip(c_row.iter()) {
            let active = p > 0.0 && q > floor;
            *g = q * active_mass - if active { p } else { 0.0 };
        }
    }
    Ok(grad)
}

fn scatter_rows(mask: &LabelMask, rows: &Array2<f64>, seq_len: usize) -> Array2<f64> {
    let mut full = Array2::zeros((seq_len, rows.ncols()));
    for (i, &t) in mask.positions.iter().enumerate() {
        full.row_mut(t).assign(&rows.row(i));
    }
    full
}

/// Which prompt InvDPO prefers over the unrelated clean prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvDpoForm {
    /// `log p(y | P̂₂) − log p(y | P′₁)`
    #[default]
    NoisyVsOther,
    /// `log p(y | P̂₂) − log p(y | P̂₁)`
    CleanVsOther,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub coipo_weight: f64,
    pub ce_weight: f64,
    pub cl_weight: f64,
    pub invdpo_weight: f64,
    pub cl_temperature: f64,
    pub prob_floor: f64,
    pub invdpo_form: InvDpoForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            coipo_weight: 1.0,
            ce_weight: 1.0,
            cl_weight: 0.0,
            invdpo_weight: 0.0,
            cl_temperature: 0.05,
            prob_floor: DEFAULT_PROB_FLOOR,
            invdpo_form: InvDpoForm::default(),
        }
    }
}

impl LossConfig {
    /// Cross-entropy only.
    pub fn sft() -> Self {
        Self {
            coipo_weight: 0.0,
            ..Self::default()
        }
    }

    /// Cross-entropy plus the hidden-state contrastive term.
    pub fn cl() -> Self {
        Self {
            coipo_weight: 0.0,
            cl_weight: 1.0,
            ..Self::default()
        }
    }

    /// Cross-entropy plus the direct log-probability InvDPO term.
    pub fn invdpo() -> Self {
        Self {
            coipo_weight: 0.0,
            invdpo_weight: 1.0,
            ..Self::default()
        }
    }

    pub fn zero() -> Self {
        Self {
            coipo_weight: 0.0,
            ce_weight: 0.0,
            cl_weight: 0.0,
            invdpo_weight: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("coipo_weight", self.coipo_weight),
            ("ce_weight", self.ce_weight),
            ("cl_weight", self.cl_weight),
            ("invdpo_weight", self.invdpo_weight),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(LossError::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {w}"
                )));
            }
        }
        if self.cl_temperature <= 0.0 || !self.cl_temperature.is_finite() {
            return Err(LossError::InvalidConfig("cl_temperature must be > 0".into()));
        }
        if self.prob_floor.is_nan() || self.prob_floor < 0.0 {
            return Err(LossError::InvalidConfig("prob_floor must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-term loss values for one triple.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pull_kl: f64,
    pub push_kl: f64,
    pub coipo: f64,
    pub ce: f64,
    pub invdpo: f64,
    pub cl: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            pull_kl: self.pull_kl * s,
            push_kl: self.push_kl * s,
            coipo: self.coipo * s,
            ce: self.ce * s,
            invdpo: self.invdpo * s,
            cl: self.cl * s,
            total: self.total * s,
        }
    }

    pub fn add(&mut self, other: &Self) {
        self.pull_kl += other.pull_kl;
        self.push_kl += other.push_kl;
        self.coipo += other.coipo;
        self.ce += other.ce;
        self.invdpo += other.invdpo;
        self.cl += other.cl;
        self.total += other.total;
    }

    pub fn is_finite(&self) -> bool {
        [
            self.pull_kl,
            self.push_kl,
            self.coipo,
            self.ce,
            self.invdpo,
            self.cl,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn check_triple(a: &LogitMatrix, b: &LogitMatrix, c: &LogitMatrix) -> Result<()> {
    if a.values.dim() != b.values.dim() || a.values.dim() != c.values.dim() {
        return Err(LossError::DimensionMismatch(format!(
            "logit shapes {:?}, {:?}, {:?}",
            a.values.dim(),
            b.values.dim(),
            c.values.dim()
        )));
    }
    Ok(())
}

/// The two KL terms shared by [`coipo_loss`] and [`delta_mi`].
fn kl_terms(
    noisy: &LogitMatrix,
    clean_same: &LogitMatrix,
    clean_other: &LogitMatrix,
    mask: &LabelMask,
    floor: f64,
) -> Result<(f64, f64)> {
    check_triple(noisy, clean_same, clean_other)?;
    let p = masked_distributions(noisy, mask)?;
    let q_same = masked_distributions(clean_same, mask)?;
    let q_other = masked_distributions(clean_other, mask)?;
    Ok((
        seq_kl_with_floor(&p, &q_same, floor)?,
        seq_kl_with_floor(&p, &q_other, floor)?,
    ))
}

/// Pull/push KL terms and their difference. `ce`, `invdpo`, `cl` and `total`
/// are left at zero.
pub fn coipo_loss(
    noisy: &LogitMatrix,
    clean_same: &LogitMatrix,
    clean_other: &LogitMatrix,
    mask: &LabelMask,
) -> Result<LossBreakdown> {
    coipo_loss_with_floor(noisy, clean_same, clean_other, mask, DEFAULT_PROB_FLOOR)
}

pub fn coipo_loss_with_floor(
    noisy: &LogitMatrix,
    clean_same: &LogitMatrix,
    clean_other: &LogitMatrix,
    mask: &LabelMask,
    floor: f64,
) -> Result<LossBreakdown> {
    let (pull_kl, push_kl) = kl_terms(noisy, clean_same, clean_other, mask, floor)?;
    Ok(LossBreakdown {
        pull_kl,
        push_kl,
        coipo: pull_kl - push_kl,
        ..LossBreakdown::default()
    })
}

/// CoIPO terms plus gradients of `coipo` with respect to the full
/// `clean_same` and `clean_other` logit matrices (rows outside the mask are
/// zero). The noisy logits receive no gradient.
pub fn coipo_loss_and_grads(
    noisy: &LogitMatrix,
    clean_same: &LogitMatrix,
    clean_other: &LogitMatrix,
    mask: &LabelMask,
    floor: f64,
) -> Result<(LossBreakdown, Array2<f64>, Array2<f64>)> {
    check_triple(noisy, clean_same, clean_other)?;
    let p = masked_distributions(noisy, mask)?;
    coipo_against_reference(&p, clean_same, clean_other, mask, floor)
}

/// As [`coipo_loss_and_grads`] but with the reference rows supplied directly,
/// which lets callers freeze them.
pub fn coipo_against_reference(
    reference: &DistributionRows,
    clean_same: &LogitMatrix,
    clean_other: &LogitMatrix,
    mask: &LabelMask,
    floor: f64,
) -> Result<(LossBreakdown, Array2<f64>, Array2<f64>)> {
    let q_same = masked_distributions(clean_same, mask)?;
    let q_other = masked_distributions(clean_other, mask)?;
    let pull_kl = seq_kl_with_floor(reference, &q_same, floor)?;
    let push_kl = seq_kl_with_floor(reference, &q_other, floor)?;
    let g_same = seq_kl_grad(reference, &q_same, floor)?;
    let g_other = -seq_kl_grad(reference, &q_other, floor)?;
    let parts = LossBreakdown {
        pull_kl,
        push_kl,
        coipo: pull_kl - push_kl,
        ..LossBreakdown::default()
    };
    let t = clean_same.seq_len();
    Ok((parts, scatter_rows(mask, &g_same, t), scatter_rows(mask, &g_other, t)))
}

/// Empirical relative mutual-information gain `push_kl − pull_kl`.
pub fn delta_mi(
    noisy: &LogitMatrix,
    clean_same: &LogitMatrix,
    clean_other: &LogitMatrix,
    mask: &LabelMask,
) -> Result<f64> {
    let (pull_kl, push_kl) = kl_terms(noisy, clean_same, clean_other, mask, DEFAULT_PROB_FLOOR)?;
    Ok(push_kl - pull_kl)
}

fn check_labels(logits: &LogitMatrix, label_tokens: &[usize], mask: &LabelMask) -> Result<()> {
    mask.check(logits)?;
    if label_tokens.len() != mask.len() {
        return Err(LossError::DimensionMismatch(format!(
            "{} label tokens for {} mask positions",
            label_tokens.len(),
            mask.len()
        )));
    }
    if let Some(&bad) = label_tokens.iter().find(|&&y| y >= logits.vocab_size()) {
        return Err(LossError::DimensionMismatch(format!(
            "label token {bad} outside vocabulary"
        )));
    }
    Ok(())
}

/// `Σ_t ln softmax(ℓ_t)[y_t]` over the mask, with its gradient
/// `onehot − softmax` on masked rows.
pub fn label_log_prob(logits: &LogitMatrix, label_tokens: &[usize], mask: &LabelMask) -> Result<(f64, Array2<f64>)> {
    check_labels(logits, label_tokens, mask)?;
    let mut total = 0.0;
    let mut grad = Array2::zeros(logits.values.dim());
    for (&t, &y) in mask.positions.iter().zip(label_tokens) {
        let row = logits.values.row(t);
        let logp = log_softmax_row(row);
        total += logp[y];
        let mut g = grad.row_mut(t);
        g.assign(&logp.mapv(|l| -l.exp()));
        g[y] += 1.0;
    }
    Ok((total, grad))
}

/// Mean per-label-token cross-entropy.
pub fn sft_loss(logits: &LogitMatrix, label_tokens: &[usize], mask: &LabelMask) -> Result<f64> {
    sft_loss_and_grad(logits, label_tokens, mask).map(|(l, _)| l)
}

pub fn sft_loss_and_grad(logits: &LogitMatrix, label_tokens: &[usize], mask: &LabelMask) -> Result<(f64, Array2<f64>)> {
    let (logp, grad) = label_log_prob(logits, label_tokens, mask)?;
    let n = mask.len() as f64;
    Ok((-logp / n, grad / -n))
}

/// `log p(y | other) − log p(y | preferred)`; negative when the preferred
/// prompt explains the label better.
pub fn invdpo_loss(
    preferred: &LogitMatrix,
    clean_other: &LogitMatrix,
    label_tokens: &[usize],
    mask: &LabelMask,
) -> Result<f64> {
    invdpo_loss_and_grads(preferred, clean_other, label_tokens, mask).map(|(l, _, _)| l)
}

/// Loss plus gradients with respect to the preferred and the other logits.
pub fn invdpo_loss_and_grads(
    preferred: &LogitMatrix,
    clean_other: &LogitMatrix,
    label_tokens: &[usize],
    mask: &LabelMask,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if preferred.values.dim() != clean_other.values.dim() {
        return Err(LossError::DimensionMismatch("invdpo logit shapes differ".into()));
    }
    let (lp_pref, g_pref) = label_log_prob(preferred, label_tokens, mask)?;
    let (lp_other, g_other) = label_log_prob(clean_other, label_tokens, mask)?;
    Ok((lp_other - lp_pref, -g_pref, g_other))
}

fn cosine_and_grads(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(LossError::ZeroVector);
    }
    let cos = a.dot(&b) / (na * nb);
    let da = &b / (na * nb) - &a * (cos / (na * na));
    let db = &a / (na * nb) - &b * (cos / (nb * nb));
    Ok((cos, da, db))
}

pub fn cosine_similarity(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    cosine_and_grads(a, b).map(|(c, _, _)| c)
}

/// Two-way InfoNCE on cosine similarities:
/// `−ln[e^{s₊/τ} / (e^{s₊/τ} + e^{s₋/τ})]` with `s₊ = cos(h_noisy, h_same)`
/// and `s₋ = cos(h_noisy, h_other)`.
pub fn cl_loss(
    h_noisy: ArrayView1<f64>,
    h_same: ArrayView1<f64>,
    h_other: ArrayView1<f64>,
    temperature: f64,
) -> Result<f64> {
    cl_loss_and_grads(h_noisy, h_same, h_other, temperature).map(|(l, _)| l)
}

/// Returns the loss and gradients for `[h_noisy, h_same, h_other]`.
pub fn cl_loss_and_grads(
    h_noisy: ArrayView1<f64>,
    h_same: ArrayView1<f64>,
    h_other: ArrayView1<f64>,
    temperature: f64,
) -> Result<(f64, [Array1<f64>; 3])> {
    if h_noisy.len() != h_same.len() || h_noisy.len() != h_other.len() {
        return Err(LossError::DimensionMismatch("hidden vectors differ in length".into()));
    }
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(LossError::InvalidConfig("cl temperature must be > 0".into()));
    }
    let (s_pos, dn_pos, ds_pos) = cosine_and_grads(h_noisy, h_same)?;
    let (s_neg, dn_neg, do_neg) = cosine_and_grads(h_noisy, h_other)?;
    let a = s_pos / temperature;
    let b = s_neg / temperature;
    // −a + ln(e^a + e^b) = softplus(b − a)
    let d = b - a;
    let loss = if d > 0.0 {
        d + (-d).exp().ln_1p()
    } else {
        d.exp().ln_1p()
    };
    let w_neg = 1.0 / (1.0 + (-d).exp()); // σ(b − a)
                                          // ∂L/∂a = −w_neg, ∂L/∂b = w_neg
    let g_noisy = (&dn_neg - &dn_pos) * (w_neg / temperature);
    let g_same = &ds_pos * (-w_neg / temperature);
    let g_other = &do_neg * (w_neg / temperature);
    Ok((loss, [g_noisy, g_same, g_other]))
}

/// Weighted combination of the computed terms, stored back into `parts.total`.
pub fn total_loss(parts: &mut LossBreakdown, config: &LossConfig) -> f64 {
    parts.total = config.ce_weight * parts.ce
        + config.coipo_weight * parts.coipo
        + config.cl_weight * parts.cl
        + config.invdpo_weight * parts.invdpo;
    parts.total
}

/// Mean over rows of a distribution matrix, used by diagnostics.
pub fn mean_row(rows: ArrayView2<f64>) -> Array1<f64> {
    rows.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(rows.ncols()))
}
