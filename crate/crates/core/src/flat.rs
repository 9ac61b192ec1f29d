//! Plain-buffer entry points for foreign hosts: row-major `T × V` logit
//! slices in, losses and gradient buffers out. Each call copies its inputs
//! once into owned matrices; nothing borrowed outlives the call.

use ndarray::Array2;

use crate::loss::{coipo_loss_and_grads, label_mask, LogitMatrix, LossBreakdown, LossError};
use crate::perturb::{CleanPrompt, PerturbError, PerturbationConfig, PerturbationKind, PerturbedPrompt, Perturber};
use crate::rng::SeededRng;

/// Shape carried alongside a flat logit buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlatShape {
    pub seq_len: usize,
    pub vocab_size: usize,
    pub prompt_len: usize,
    pub label_len: usize,
}

fn matrix(buf: &[f64], shape: FlatShape) -> Result<LogitMatrix, LossError> {
    let values = Array2::from_shape_vec((shape.seq_len, shape.vocab_size), buf.to_vec()).map_err(|_| {
        LossError::DimensionMismatch(format!(
            "buffer of {} values for shape {}×{}",
            buf.len(),
            shape.seq_len,
            shape.vocab_size
        ))
    })?;
    LogitMatrix::new(values, shape.prompt_len, shape.label_len)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatCoipo {
    pub parts: LossBreakdown,
    /// Row-major gradient of `coipo` with respect to the clean-same logits.
    pub grad_same: Vec<f64>,
    pub grad_other: Vec<f64>,
}

/// CoIPO terms and clean-side gradients on flat buffers sharing one shape.
pub fn coipo_loss_flat(
    noisy: &[f64],
    clean_same: &[f64],
    clean_other: &[f64],
    shape: FlatShape,
    prob_floor: f64,
) -> Result<FlatCoipo, LossError> {
    let n = matrix(noisy, shape)?;
    let s = matrix(clean_same, shape)?;
    let o = matrix(clean_other, shape)?;
    let mask = label_mask(shape.prompt_len, shape.label_len)?;
    let (parts, gs, go) = coipo_loss_and_grads(&n, &s, &o, &mask, prob_floor)?;
    Ok(FlatCoipo {
        parts,
        grad_same: gs.into_iter().collect(),
        grad_other: go.into_iter().collect(),
    })
}

/// Seeded perturbation of `text`; `kind = None` draws one uniformly.
pub fn perturb_text(
    text: &str,
    kind: Option<PerturbationKind>,
    seed: u64,
    config: &PerturbationConfig,
) -> Result<PerturbedPrompt, PerturbError> {
    let perturber = Perturber::new(config.clone())?;
    perturber.perturb(&CleanPrompt::new(text)?, kind, &mut SeededRng::new(seed))
}

/// Stable variant name for errors crossing a language boundary.
pub trait ErrorName {
    fn error_name(&self) -> &'static str;
}

impl ErrorName for LossError {
    fn error_name(&self) -> &'static str {
        match self {
            LossError::InvalidLength { .. } => "InvalidLength",
            LossError::DimensionMismatch(_) => "DimensionMismatch",
            LossError::NonFinite => "NonFinite",
            LossError::ZeroVector => "ZeroVector",
            LossError::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

impl ErrorName for PerturbError {
    fn error_name(&self) -> &'static str {
        match self {
            PerturbError::NoEligibleWord => "NoEligibleWord",
            PerturbError::LexiconParse { .. } => "LexiconParse",
            PerturbError::InvalidConfig(_) => "InvalidConfig",
            PerturbError::InvalidPrompt(_) => "InvalidPrompt",
            PerturbError::ProvenanceMismatch => "ProvenanceMismatch",
            PerturbError::ReplayMismatch { .. } => "ReplayMismatch",
            PerturbError::Io { .. } => "Io",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{coipo_loss, DEFAULT_PROB_FLOOR};

    const SHAPE: FlatShape = FlatShape {
        seq_len: 4,
        vocab_size: 6,
        prompt_len: 2,
        label_len: 2,
    };

    fn buf(seed: u64) -> Vec<f64> {
        let mut rng = SeededRng::new(seed);
        (0..24).map(|_| rng.uniform(-2.0, 2.0)).collect()
    }

    #[test]
    fn equal_buffers_give_zero() {
        let b = buf(1);
        let out = coipo_loss_flat(&b, &b, &b, SHAPE, DEFAULT_PROB_FLOOR).unwrap();
        assert_eq!(out.parts.coipo, 0.0);
        assert!(out.grad_same.iter().zip(&out.grad_other).all(|(a, b)| a + b == 0.0));
    }

    #[test]
    fn matches_matrix_kernels() {
        let (n, s, o) = (buf(1), buf(2), buf(3));
        let flat = coipo_loss_flat(&n, &s, &o, SHAPE, DEFAULT_PROB_FLOOR).unwrap();
        let m = |b: &[f64]| matrix(b, SHAPE).unwrap();
        let mask = label_mask(2, 2).unwrap();
        assert_eq!(flat.parts, coipo_loss(&m(&n), &m(&s), &m(&o), &mask).unwrap());
    }

    #[test]
    fn shape_errors_are_named() {
        let e = coipo_loss_flat(&[0.0; 5], &[0.0; 24], &[0.0; 24], SHAPE, DEFAULT_PROB_FLOOR).unwrap_err();
        assert_eq!(e.error_name(), "DimensionMismatch");
    }

    #[test]
    fn perturb_is_seed_stable() {
        let c = PerturbationConfig::default();
        let a = perturb_text("classify the review as positive", None, 9, &c).unwrap();
        assert_eq!(a, perturb_text("classify the review as positive", None, 9, &c).unwrap());
    }
}
