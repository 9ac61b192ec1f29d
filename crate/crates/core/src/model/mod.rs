//! A small word-level causal transformer with hand-written gradients, used
//! to train and evaluate the contrastive objective at desk scale.

mod checkpoint;
mod params;
mod train;
mod transformer;
mod vocab;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss::LossError;

pub use checkpoint::{CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use params::{LayerParams, Parameters};
pub use train::{
    batch_loss_and_grads, encode_triple, grad_check, grad_check_sampled, loss_and_grads, read_metrics_jsonl, train,
    write_metrics_jsonl, GradCheckReport, OptimizerState, StepMetrics, TokenTriple, TrainOutcome, GRAD_CHECK_FLOOR,
};
pub use transformer::{backward, forward, ForwardCache, ForwardOutput};
pub use vocab::{build_vocab, tokenize, Vocab, BOS, PAD, RESERVED, UNK};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("corpus produced no tokens above the count threshold")]
    EmptyCorpus,
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("sequence has no non-pad tokens")]
    EmptySequence,
    #[error("invalid tokens: {0}")]
    InvalidTokens(String),
    #[error("epsilon must be non-zero and finite")]
    InvalidEpsilon,
    #[error("non-finite loss or gradient at batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            d_ff: 128,
            max_seq: 256,
            init_seed: 42,
        }
    }
}

impl ModelConfig {
    /// Gradient-check scale: `d_model = 8`, two layers, `max_seq = 16`.
    pub fn tiny() -> Self {
        Self {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 16,
            max_seq: 16,
            init_seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ff == 0 {
            return Err(ModelError::InvalidConfig("d_ff must be positive".into()));
        }
        if self.max_seq < 2 {
            return Err(ModelError::InvalidConfig("max_seq must be >= 2".into()));
        }
        Ok(())
    }
}

/// Config, vocabulary and weights bundled together.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLm {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Parameters,
}

impl ToyLm {
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        let params = Parameters::init(&config, vocab.len())?;
        Ok(Self { config, vocab, params })
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<ForwardOutput> {
        forward(&self.params, tokens)
    }

    /// `[bos] + encode(prompt)`.
    pub fn encode_prompt(&self, prompt: &str) -> Vec<usize> {
        std::iter::once(BOS).chain(self.vocab.encode(prompt)).collect()
    }
}
