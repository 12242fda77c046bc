//! Self-describing checkpoint container.
//!
//! A checkpoint is a JSON document holding a format-version tag, the model
//! kind and dimensions, the exercise vocabulary (original tags in dense-id
//! order), and every parameter tensor by name in registry order. Values
//! round-trip exactly: the JSON writer emits the shortest decimal that
//! parses back to the same f64 bits.

use crate::model::{ModelConfig, ModelError, ModelKind};
use crate::optim::ParamRegistry;
use crate::tensor::{Tensor, TensorError};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unsupported checkpoint format version {0} (expected {FORMAT_VERSION})")]
    BadVersion(u32),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongKind {
        expected: ModelKind,
        found: ModelKind,
    },
    #[error("vocabulary of {vocab} tags does not match the model's {q} exercises")]
    VocabularyMismatch { vocab: usize, q: usize },
    #[error("checkpoint has {found} parameters, the model expects {expected}")]
    ParamCountMismatch { expected: usize, found: usize },
    #[error("parameter {index}: expected {expected:?}, found {found:?}")]
    ParamNameMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("parameter {name:?}: shape {found:?} does not match the model's {expected:?}")]
    ParamShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter {0:?} holds a non-finite value")]
    NonFinite(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    /// Original exercise tags in dense-id order: dense id q maps to
    /// `vocabulary[q - 1]`.
    pub vocabulary: Vec<i64>,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    /// Snapshots a registry. The registry must hold exactly the parameters
    /// the model config prescribes, in order, all finite.
    pub fn from_registry(
        model: ModelConfig,
        vocabulary: Vec<i64>,
        registry: &ParamRegistry,
    ) -> Result<Self, CheckpointError> {
        model.validate()?;
        if vocabulary.len() != model.q() {
            return Err(CheckpointError::VocabularyMismatch {
                vocab: vocabulary.len(),
                q: model.q(),
            });
        }
        let expected = model.param_shapes();
        if registry.len() != expected.len() {
            return Err(CheckpointError::ParamCountMismatch {
                expected: expected.len(),
                found: registry.len(),
            });
        }
        let mut params = Vec::with_capacity(expected.len());
        for (index, (entry, (name, shape))) in
            registry.entries().zip(expected.into_iter()).enumerate()
        {
            if entry.name() != name {
                return Err(CheckpointError::ParamNameMismatch {
                    index,
                    expected: name.to_string(),
                    found: entry.name().to_string(),
                });
            }
            if entry.value().shape() != shape.as_slice() {
                return Err(CheckpointError::ParamShapeMismatch {
                    name: name.to_string(),
                    expected: shape,
                    found: entry.value().shape().to_vec(),
                });
            }
            if !entry.value().all_finite() {
                return Err(CheckpointError::NonFinite(name.to_string()));
            }
            params.push(NamedTensor {
                name: name.to_string(),
                shape,
                data: entry.value().data().to_vec(),
            });
        }
        Ok(Checkpoint {
            format_version: FORMAT_VERSION,
            model,
            vocabulary,
            params,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    /// Rebuilds a parameter registry, validating names, shapes, and
    /// finiteness against the model config.
    pub fn registry(&self) -> Result<ParamRegistry, CheckpointError> {
        let expected = self.model.param_shapes();
        if self.params.len() != expected.len() {
            return Err(CheckpointError::ParamCountMismatch {
                expected: expected.len(),
                found: self.params.len(),
            });
        }
        let mut registry = ParamRegistry::new();
        for (index, (stored, (name, shape))) in
            self.params.iter().zip(expected.into_iter()).enumerate()
        {
            if stored.name != name {
                return Err(CheckpointError::ParamNameMismatch {
                    index,
                    expected: name.to_string(),
                    found: stored.name.clone(),
                });
            }
            if stored.shape != shape {
                return Err(CheckpointError::ParamShapeMismatch {
                    name: name.to_string(),
                    expected: shape,
                    found: stored.shape.clone(),
                });
            }
            let tensor = Tensor::from_vec(&stored.shape, stored.data.clone())?;
            if !tensor.all_finite() {
                return Err(CheckpointError::NonFinite(name.to_string()));
            }
            registry.add(name, tensor).map_err(ModelError::from)?;
        }
        Ok(registry)
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != FORMAT_VERSION {
            return Err(CheckpointError::BadVersion(ck.format_version));
        }
        ck.model.validate()?;
        if ck.vocabulary.len() != ck.model.q() {
            return Err(CheckpointError::VocabularyMismatch {
                vocab: ck.vocabulary.len(),
                q: ck.model.q(),
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Checkpoint::from_json(&fs::read_to_string(path)?)
    }

    /// The checkpoint reinterpreted as `expected`-kind, or an error naming
    /// both kinds.
    pub fn expect_kind(&self, expected: ModelKind) -> Result<(), CheckpointError> {
        if self.kind() != expected {
            return Err(CheckpointError::WrongKind {
                expected,
                found: self.kind(),
            });
        }
        Ok(())
    }
}
