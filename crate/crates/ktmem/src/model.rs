//! Shared model-layer plumbing: the model taxonomy, per-sequence evaluation
//! results, and the glue that binds registry parameters onto a tape and
//! routes gradients back.

use crate::diff::{Gradients, Tape, Var};
use crate::dkt::DktConfig;
use crate::dkvmn::DkvmnConfig;
use crate::mann::MannConfig;
use crate::optim::{OptimError, ParamRegistry, ParamSlot};
use crate::tensor::TensorError;
use crate::{dkt, dkvmn, mann};
use rand::Rng;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("parameter {0:?} missing from registry")]
    MissingParam(String),
    #[error("model config: {0}")]
    BadConfig(String),
}

/// The three sequence models under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Dkvmn,
    Mann,
    Dkt,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dkvmn => "dkvmn",
            ModelKind::Mann => "mann",
            ModelKind::Dkt => "dkt",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dkvmn" => Ok(ModelKind::Dkvmn),
            "mann" => Ok(ModelKind::Mann),
            "dkt" => Ok(ModelKind::Dkt),
            other => Err(format!(
                "unknown model kind {other:?}; expected dkvmn, mann, or dkt"
            )),
        }
    }
}

/// Result of pushing one padded row through a model: the summed
/// cross-entropy over valid prediction points, and each point's
/// (probability, label) pair in sequence order.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEval {
    pub loss: f64,
    pub points: Vec<(f64, u8)>,
}

impl SequenceEval {
    pub fn empty() -> Self {
        SequenceEval {
            loss: 0.0,
            points: Vec::new(),
        }
    }
}

/// Named parameter lookup with a model-level error on absence.
pub(crate) fn param<'a>(
    registry: &'a ParamRegistry,
    name: &str,
) -> Result<&'a crate::tensor::Tensor, ModelError> {
    registry
        .slot(name)
        .map(|s| registry.value(s))
        .ok_or_else(|| ModelError::MissingParam(name.to_string()))
}

/// Tracks which tape leaves mirror which registry parameters so the
/// backward pass can be routed into the registry's gradient buffers.
pub(crate) struct Binding {
    pairs: Vec<(ParamSlot, Var)>,
}

impl Binding {
    pub(crate) fn new() -> Self {
        Binding { pairs: Vec::new() }
    }

    /// Copies the named parameter onto the tape as a leaf and remembers the
    /// pairing.
    pub(crate) fn leaf(
        &mut self,
        tape: &mut Tape,
        registry: &ParamRegistry,
        name: &str,
    ) -> Result<Var, ModelError> {
        let slot = registry
            .slot(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        let var = tape.leaf(registry.value(slot).clone());
        self.pairs.push((slot, var));
        Ok(var)
    }

    /// Adds each bound leaf's adjoint (when the loss depends on it) into the
    /// registry's gradient buffer.
    pub(crate) fn accumulate(
        &self,
        grads: &Gradients,
        registry: &mut ParamRegistry,
    ) -> Result<(), ModelError> {
        for &(slot, var) in &self.pairs {
            if let Some(g) = grads.wrt(var) {
                registry.accumulate_grad(slot, g)?;
            }
        }
        Ok(())
    }
}

/// Model choice plus its dimensions; the single dispatch point used by the
/// trainer, checkpointing, and the CLI.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Dkvmn(DkvmnConfig),
    Mann(MannConfig),
    Dkt(DktConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Dkvmn(_) => ModelKind::Dkvmn,
            ModelConfig::Mann(_) => ModelKind::Mann,
            ModelConfig::Dkt(_) => ModelKind::Dkt,
        }
    }

    /// Exercise vocabulary size the model was shaped for.
    pub fn q(&self) -> usize {
        match self {
            ModelConfig::Dkvmn(c) => c.q,
            ModelConfig::Mann(c) => c.q,
            ModelConfig::Dkt(c) => c.q,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelConfig::Dkvmn(c) => c.validate(),
            ModelConfig::Mann(c) => c.validate(),
            ModelConfig::Dkt(c) => c.validate(),
        }
    }

    /// Parameter names and shapes in registry order; the checkpoint format
    /// and `init_params` both follow this list.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match self {
            ModelConfig::Dkvmn(c) => dkvmn::param_shapes(c),
            ModelConfig::Mann(c) => mann::param_shapes(c),
            ModelConfig::Dkt(c) => dkt::param_shapes(c),
        }
    }

    pub fn init_params(&self, sigma: f64, rng: &mut impl Rng) -> Result<ParamRegistry, ModelError> {
        match self {
            ModelConfig::Dkvmn(c) => dkvmn::init_params(c, sigma, rng),
            ModelConfig::Mann(c) => mann::init_params(c, sigma, rng),
            ModelConfig::Dkt(c) => dkt::init_params(c, sigma, rng),
        }
    }

    /// Loss and prediction points for one padded row, no gradients.
    pub fn sequence_eval(
        &self,
        registry: &ParamRegistry,
        row: &crate::encoding::PaddedRow,
    ) -> Result<SequenceEval, ModelError> {
        match self {
            ModelConfig::Dkvmn(c) => dkvmn::sequence_eval(c, registry, row),
            ModelConfig::Mann(c) => mann::sequence_eval(c, registry, row),
            ModelConfig::Dkt(c) => dkt::sequence_eval(c, registry, row),
        }
    }

    /// Same forward pass, plus gradient accumulation into the registry.
    pub fn sequence_grad(
        &self,
        registry: &mut ParamRegistry,
        row: &crate::encoding::PaddedRow,
    ) -> Result<SequenceEval, ModelError> {
        match self {
            ModelConfig::Dkvmn(c) => dkvmn::sequence_grad(c, registry, row),
            ModelConfig::Mann(c) => mann::sequence_grad(c, registry, row),
            ModelConfig::Dkt(c) => dkt::sequence_grad(c, registry, row),
        }
    }
}
