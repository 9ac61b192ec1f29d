use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Parameters, Result, ToyLm, Vocab};

pub const CHECKPOINT_FORMAT: &str = "coipo-toy-lm";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Vocab,
    tensors: BTreeMap<String, TensorRecord>,
}

impl ToyLm {
    pub fn to_json(&self) -> String {
        let tensors = self
            .params
            .names()
            .into_iter()
            .zip(self.params.tensors())
            .map(|(name, (shape, data))| {
                (
                    name,
                    TensorRecord {
                        shape,
                        data: data.to_vec(),
                    },
                )
            })
            .collect();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tensors,
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let mut file: CheckpointFile = serde_json::from_str(json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unknown format `{}`", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", file.version)));
        }
        let mut params = Parameters::init(&file.config, file.vocab.len())?;
        let names = params.names();
        let shapes: Vec<Vec<usize>> = params.tensors().into_iter().map(|(s, _)| s).collect();
        if file.tensors.len() != names.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                file.tensors.len()
            )));
        }
        for ((name, shape), dst) in names.iter().zip(&shapes).zip(params.tensors_mut()) {
            let rec = file
                .tensors
                .remove(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor `{name}`")))?;
            if &rec.shape != shape || rec.data.len() != dst.len() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    rec.shape
                )));
            }
            dst.copy_from_slice(&rec.data);
        }
        if !params.is_finite() {
            return Err(ModelError::Checkpoint("non-finite weights".into()));
        }
        Ok(Self {
            config: file.config,
            vocab: file.vocab,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}
