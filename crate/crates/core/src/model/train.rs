use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::transformer::{backward, forward};
use super::vocab::{BOS, PAD};
use super::{ModelError, Parameters, Result, Vocab};
use crate::loss::{
    cl_loss_and_grads, coipo_against_reference, invdpo_loss_and_grads, label_mask, masked_distributions,
    sft_loss_and_grad, total_loss, DistributionRows, InvDpoForm, LabelMask, LogitMatrix, LossBreakdown, LossConfig,
    LossError,
};
use crate::pairs::ContrastiveTriple;
use crate::rng::SeededRng;

/// A contrastive triple as token ids. All three sequences are
/// `pads ⊕ [bos] ⊕ prompt ⊕ label` of equal length, left-padded so the label
/// rows line up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTriple {
    pub noisy: Vec<usize>,
    pub clean_same: Vec<usize>,
    pub clean_other: Vec<usize>,
    pub label: Vec<usize>,
    pub prompt_len: usize,
}

impl TokenTriple {
    /// Prompts are given without the leading bos token.
    pub fn align(noisy: &[usize], clean_same: &[usize], clean_other: &[usize], label: &[usize]) -> Result<Self> {
        if label.is_empty() {
            return Err(ModelError::InvalidTokens("empty label".into()));
        }
        let prompt_len = 1 + noisy.len().max(clean_same.len()).max(clean_other.len());
        let build = |prompt: &[usize]| -> Vec<usize> {
            let mut seq = vec![PAD; prompt_len - 1 - prompt.len()];
            seq.push(BOS);
            seq.extend_from_slice(prompt);
            seq.extend_from_slice(label);
            seq
        };
        Ok(Self {
            noisy: build(noisy),
            clean_same: build(clean_same),
            clean_other: build(clean_other),
            label: label.to_vec(),
            prompt_len,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.prompt_len + self.label.len()
    }

    pub fn mask(&self) -> LabelMask {
        label_mask(self.prompt_len, self.label.len()).expect("prompt_len and label are non-empty")
    }
}

pub fn encode_triple(vocab: &Vocab, triple: &ContrastiveTriple) -> Result<TokenTriple> {
    TokenTriple::align(
        &vocab.encode(&triple.noisy),
        &vocab.encode(&triple.clean_same),
        &vocab.encode(&triple.clean_other),
        &vocab.encode(&triple.label),
    )
}

fn wrap(values: Array2<f64>, triple: &TokenTriple) -> Result<LogitMatrix> {
    LogitMatrix::new(values, triple.prompt_len, triple.label.len()).map_err(ModelError::from)
}

/// Loss terms for one triple; when `grads` is given, accumulates the gradient
/// of the weighted total into it. `reference` overrides the noisy-prompt
/// distributions used by the KL terms.
fn triple_loss(
    params: &Parameters,
    triple: &TokenTriple,
    config: &LossConfig,
    reference: Option<&DistributionRows>,
    grads: Option<&mut Parameters>,
) -> Result<LossBreakdown> {
    let mask = triple.mask();
    let out_n = forward(params, &triple.noisy)?;
    let out_s = forward(params, &triple.clean_same)?;
    let out_o = forward(params, &triple.clean_other)?;
    let noisy = wrap(out_n.logits.clone(), triple)?;
    let same = wrap(out_s.logits.clone(), triple)?;
    let other = wrap(out_o.logits.clone(), triple)?;

    let own_reference;
    let reference = match reference {
        Some(r) => r,
        None => {
            own_reference = masked_distributions(&noisy, &mask)?;
            &own_reference
        }
    };
    let (mut parts, g_same_kl, g_other_kl) =
        coipo_against_reference(reference, &same, &other, &mask, config.prob_floor)?;
    let (ce, g_ce) = sft_loss_and_grad(&noisy, &triple.label, &mask)?;
    parts.ce = ce;
    let preferred = match config.invdpo_form {
        InvDpoForm::NoisyVsOther => &noisy,
        InvDpoForm::CleanVsOther => &same,
    };
    let (inv, g_pref, g_inv_other) = invdpo_loss_and_grads(preferred, &other, &triple.label, &mask)?;
    parts.invdpo = inv;
    let cl = match cl_loss_and_grads(
        out_n.hidden.view(),
        out_s.hidden.view(),
        out_o.hidden.view(),
        config.cl_temperature,
    ) {
        Ok(r) => Some(r),
        Err(LossError::ZeroVector) if config.cl_weight == 0.0 => None,
        Err(e) => return Err(e.into()),
    };
    parts.cl = cl.as_ref().map_or(0.0, |(l, _)| *l);
    total_loss(&mut parts, config);

    let Some(grads) = grads else {
        return Ok(parts);
    };
    let (wc, wk, wi, wl) = (
        config.ce_weight,
        config.coipo_weight,
        config.invdpo_weight,
        config.cl_weight,
    );
    let t = triple.seq_len();
    let v = params.vocab_size();
    let mut dl_n = Array2::zeros((t, v));
    let mut dl_s = Array2::zeros((t, v));
    let mut dl_o = Array2::zeros((t, v));
    let (mut use_n, mut use_s, mut use_o) = (false, false, false);
    if wc != 0.0 {
        dl_n.scaled_add(wc, &g_ce);
        use_n = true;
    }
    if wk != 0.0 {
        dl_s.scaled_add(wk, &g_same_kl);
        dl_o.scaled_add(wk, &g_other_kl);
        use_s = true;
        use_o = true;
    }
    if wi != 0.0 {
        match config.invdpo_form {
            InvDpoForm::NoisyVsOther => {
                dl_n.scaled_add(wi, &g_pref);
                use_n = true;
            }
            InvDpoForm::CleanVsOther => {
                dl_s.scaled_add(wi, &g_pref);
                use_s = true;
            }
        }
        dl_o.scaled_add(wi, &g_inv_other);
        use_o = true;
    }
    let hidden_grads = match (&cl, wl != 0.0) {
        (Some((_, g)), true) => {
            use_n = true;
            use_s = true;
            use_o = true;
            Some([&g[0] * wl, &g[1] * wl, &g[2] * wl])
        }
        _ => None,
    };
    let dh = |i: usize| hidden_grads.as_ref().map(|h| h[i].view());
    if use_n {
        backward(params, &out_n.cache, &dl_n, dh(0), grads);
    }
    if use_s {
        backward(params, &out_s.cache, &dl_s, dh(1), grads);
    }
    if use_o {
        backward(params, &out_o.cache, &dl_o, dh(2), grads);
    }
    Ok(parts)
}

/// Loss breakdown and gradients of `total` with respect to every parameter.
/// The noisy-prompt distributions in the KL terms are constants.
pub fn loss_and_grads(
    params: &Parameters,
    triple: &TokenTriple,
    config: &LossConfig,
) -> Result<(LossBreakdown, Parameters)> {
    let mut grads = params.zeros_like();
    let parts = triple_loss(params, triple, config, None, Some(&mut grads))?;
    Ok((parts, grads))
}

/// Summed loss terms and summed gradients over `batch`.
pub fn batch_loss_and_grads(
    params: &Parameters,
    batch: &[&TokenTriple],
    config: &LossConfig,
) -> Result<(LossBreakdown, Parameters)> {
    let mut grads = params.zeros_like();
    let mut sum = LossBreakdown::default();
    for triple in batch {
        // per-example buffers keep the sum independent of accumulation order inside backward
        let (parts, g) = loss_and_grads(params, triple, config)?;
        grads.add_scaled(&g, 1.0);
        sum.add(&parts);
    }
    Ok((sum, grads))
}

/// Adaptive-moment optimizer state (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Option<Parameters>,
    second: Option<Parameters>,
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self::new(1e-4)
    }
}

impl OptimizerState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: None,
            second: None,
        }
    }

    pub fn moments(&self) -> Option<(&Parameters, &Parameters)> {
        self.first.as_ref().zip(self.second.as_ref())
    }

    pub fn update(&mut self, params: &mut Parameters, grads: &Parameters) {
        let m = self.first.get_or_insert_with(|| params.zeros_like());
        let v = self.second.get_or_insert_with(|| params.zeros_like());
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.learning_rate;
        let eps = self.epsilon;
        for (((p, (_, g)), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(m.tensors_mut())
            .zip(v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// One record per optimizer step; values are batch means before the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub pull_kl: f64,
    pub push_kl: f64,
    pub coipo: f64,
    pub ce: f64,
    pub cl: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub log: Vec<StepMetrics>,
}

/// Mini-batch training. Each epoch shuffles the dataset with a stream
/// derived from `seed`; gradients are averaged over the batch.
pub fn train(
    mut params: Parameters,
    dataset: &[TokenTriple],
    config: &LossConfig,
    optimizer: &mut OptimizerState,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if epochs > 0 && dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(ModelError::InvalidConfig("batch_size must be positive".into()));
    }
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..epochs {
        SeededRng::derive(seed, epoch as u64).shuffle(&mut order);
        for chunk in order.chunks(batch_size) {
            let batch_index = log.len();
            let batch: Vec<&TokenTriple> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (sum, mut grads) = batch_loss_and_grads(&params, &batch, config).map_err(|e| match e {
                ModelError::Loss(LossError::NonFinite) => ModelError::NonFiniteLoss { batch: batch_index },
                e => e,
            })?;
            let n = batch.len() as f64;
            let mean = sum.scaled(1.0 / n);
            grads.scale(1.0 / n);
            if !mean.is_finite() || !grads.is_finite() {
                return Err(ModelError::NonFiniteLoss { batch: batch_index });
            }
            optimizer.update(&mut params, &grads);
            log.push(StepMetrics {
                step: batch_index,
                pull_kl: mean.pull_kl,
                push_kl: mean.push_kl,
                coipo: mean.coipo,
                ce: mean.ce,
                cl: mean.cl,
                total: mean.total,
            });
            log::debug!(
                "step {batch_index}: total={:.6} ce={:.6} coipo={:.6}",
                mean.total,
                mean.ce,
                mean.coipo
            );
        }
    }
    Ok(TrainOutcome { params, log })
}

pub fn write_metrics_jsonl(log: &[StepMetrics], path: &Path) -> Result<()> {
    let io = |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for m in log {
        serde_json::to_writer(&mut w, m).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_metrics_jsonl(path: &Path) -> Result<Vec<StepMetrics>> {
    let io = |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io)?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| ModelError::Checkpoint(e.to_string()))?);
        }
    }
    Ok(out)
}

/// Denominator floor for relative errors: entries where both the analytic
/// and numeric gradients are below this are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_entry: usize,
    pub entries_checked: usize,
}

/// Central-difference check of [`loss_and_grads`] over every parameter entry.
pub fn grad_check(params: &Parameters, triple: &TokenTriple, config: &LossConfig, epsilon: f64) -> Result<f64> {
    grad_check_sampled(params, triple, config, epsilon, None).map(|r| r.max_rel_error)
}

/// As [`grad_check`]; `sample = Some((count, seed))` checks a seeded subset of
/// entries instead of all of them.
///
/// The numeric objective holds the noisy-prompt reference distributions at
/// their values under `params`, which is the function whose gradient
/// [`loss_and_grads`] returns.
pub fn grad_check_sampled(
    params: &Parameters,
    triple: &TokenTriple,
    config: &LossConfig,
    epsilon: f64,
    sample: Option<(usize, u64)>,
) -> Result<GradCheckReport> {
    if epsilon == 0.0 || !epsilon.is_finite() {
        return Err(ModelError::InvalidEpsilon);
    }
    let (_, analytic) = loss_and_grads(params, triple, config)?;
    let noisy = forward(params, &triple.noisy)?;
    let reference = masked_distributions(&wrap(noisy.logits, triple)?, &triple.mask())?;
    let n = params.num_entries();
    let mut entries: Vec<usize> = (0..n).collect();
    if let Some((count, seed)) = sample {
        if count < n {
            SeededRng::new(seed).shuffle(&mut entries);
            entries.truncate(count);
            entries.sort_unstable();
        }
    }
    let mut probe = params.clone();
    let mut worst = (0.0, 0);
    for &idx in &entries {
        let orig = params.entry(idx).expect("index in range");
        *probe.entry_mut(idx).expect("index in range") = orig + epsilon;
        let up = triple_loss(&probe, triple, config, Some(&reference), None)?.total;
        *probe.entry_mut(idx).expect("index in range") = orig - epsilon;
        let down = triple_loss(&probe, triple, config, Some(&reference), None)?.total;
        *probe.entry_mut(idx).expect("index in range") = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic.entry(idx).expect("index in range");
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        if rel > worst.0 {
            worst = (rel, idx);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_entry: worst.1,
        entries_checked: entries.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny_params() -> Parameters {
        Parameters::init(&ModelConfig::tiny(), 12).unwrap()
    }

    fn triple() -> TokenTriple {
        TokenTriple::align(&[4, 5, 3, 6], &[4, 5, 6], &[7, 8, 9, 10, 11], &[3, 11]).unwrap()
    }

    fn dataset() -> Vec<TokenTriple> {
        vec![
            triple(),
            TokenTriple::align(&[5, 6], &[5, 6, 7], &[8, 9], &[10]).unwrap(),
            TokenTriple::align(&[9, 1, 4], &[9, 4], &[3, 6, 7], &[4, 5]).unwrap(),
            TokenTriple::align(&[11, 3], &[11, 3, 3], &[6], &[8]).unwrap(),
        ]
    }

    #[test]
    fn alignment_pads_on_the_left() {
        let t = triple();
        assert_eq!(t.prompt_len, 6);
        assert_eq!(t.noisy, vec![PAD, BOS, 4, 5, 3, 6, 3, 11]);
        assert_eq!(t.clean_same, vec![PAD, PAD, BOS, 4, 5, 6, 3, 11]);
        assert_eq!(t.clean_other, vec![BOS, 7, 8, 9, 10, 11, 3, 11]);
        assert_eq!(t.mask().positions(), &[5, 6]);
        assert!(TokenTriple::align(&[1], &[1], &[1], &[]).is_err());
    }

    #[test]
    fn zero_weights_give_zero_gradients() {
        let (_, g) = loss_and_grads(&tiny_params(), &triple(), &LossConfig::zero()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn duplicated_batch_doubles_gradients() {
        let p = tiny_params();
        let t = triple();
        let (one, g1) = batch_loss_and_grads(&p, &[&t], &LossConfig::default()).unwrap();
        let (two, g2) = batch_loss_and_grads(&p, &[&t, &t], &LossConfig::default()).unwrap();
        let mut doubled = g1.clone();
        doubled.scale(2.0);
        assert_eq!(g2, doubled);
        assert_eq!(two.total, 2.0 * one.total);
    }

    #[test]
    fn noisy_branch_has_no_kl_gradient() {
        // With only coipo active, tokens unique to the noisy prompt get no gradient.
        let p = tiny_params();
        let t = TokenTriple::align(&[4, 5], &[6, 7], &[8, 9], &[3]).unwrap();
        let cfg = LossConfig {
            ce_weight: 0.0,
            ..LossConfig::default()
        };
        let (_, g) = loss_and_grads(&p, &t, &cfg).unwrap();
        assert!(g.tok_emb.row(4).iter().all(|&x| x == 0.0));
        assert!(g.tok_emb.row(5).iter().all(|&x| x == 0.0));
        assert!(g.tok_emb.row(6).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn grad_check_default_loss() {
        let r = grad_check_sampled(&tiny_params(), &triple(), &LossConfig::default(), 1e-4, None).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn grad_check_all_terms() {
        let cfg = LossConfig {
            cl_weight: 0.5,
            invdpo_weight: 0.3,
            cl_temperature: 0.5,
            ..LossConfig::default()
        };
        let r = grad_check_sampled(&tiny_params(), &triple(), &cfg, 1e-4, Some((300, 3))).unwrap();
        assert_eq!(r.entries_checked, 300);
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
        let cfg = LossConfig {
            invdpo_form: InvDpoForm::CleanVsOther,
            ..cfg
        };
        let r = grad_check_sampled(&tiny_params(), &triple(), &cfg, 1e-4, Some((300, 4))).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn grad_check_rejects_zero_epsilon_and_is_deterministic() {
        let p = tiny_params();
        assert!(matches!(
            grad_check(&p, &triple(), &LossConfig::default(), 0.0),
            Err(ModelError::InvalidEpsilon)
        ));
        let a = grad_check_sampled(&p, &triple(), &LossConfig::default(), 1e-4, Some((200, 9))).unwrap();
        let b = grad_check_sampled(&p, &triple(), &LossConfig::default(), 1e-4, Some((200, 9))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epochs_returns_params_unchanged() {
        let p = tiny_params();
        let mut opt = OptimizerState::default();
        let out = train(p.clone(), &dataset(), &LossConfig::default(), &mut opt, 0, 2, 1).unwrap();
        assert_eq!(out.params, p);
        assert!(out.log.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut opt = OptimizerState::new(1e-3);
            train(tiny_params(), &dataset(), &LossConfig::default(), &mut opt, 3, 2, 7).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
        assert_eq!(a.log.len(), 6);
    }

    #[test]
    fn full_batch_loss_mostly_non_increasing() {
        let mut good = 0;
        for seed in 0..10 {
            let cfg = ModelConfig {
                init_seed: seed,
                ..ModelConfig::tiny()
            };
            let p = Parameters::init(&cfg, 12).unwrap();
            let mut opt = OptimizerState::default();
            let out = train(p, &dataset(), &LossConfig::default(), &mut opt, 20, 4, seed).unwrap();
            if out.log.windows(2).all(|w| w[1].total <= w[0].total) {
                good += 1;
            }
        }
        assert!(good >= 8, "{good}/10");
    }

    #[test]
    fn non_finite_loss_reports_batch() {
        let mut p = tiny_params();
        p.b_out[3] = f64::NAN;
        let mut opt = OptimizerState::default();
        let err = train(p, &dataset(), &LossConfig::default(), &mut opt, 1, 2, 0).unwrap_err();
        assert!(matches!(err, ModelError::NonFiniteLoss { batch: 0 }), "{err:?}");
    }

    #[test]
    fn metrics_jsonl_round_trip() {
        let mut opt = OptimizerState::default();
        let out = train(tiny_params(), &dataset(), &LossConfig::default(), &mut opt, 1, 2, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        write_metrics_jsonl(&out.log, &path).unwrap();
        assert_eq!(read_metrics_jsonl(&path).unwrap(), out.log);
        let line = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["ce", "cl", "coipo", "pull_kl", "push_kl", "step", "total"]);
    }
}
