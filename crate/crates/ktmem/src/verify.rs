//! Standalone gradient verification on fixed tiny model instances.
//!
//! Each model kind gets one deterministic configuration (5 exercises, 3
//! memory slots or hidden units of width 4, one 6-step sequence) small
//! enough to probe every parameter coordinate with central differences in
//! seconds. The same entry point backs the command-line `gradcheck`
//! command and the release gate.

use crate::dkt::DktConfig;
use crate::dkvmn::DkvmnConfig;
use crate::encoding::{pad_sequence, Interaction, StudentSequence};
use crate::mann::MannConfig;
use crate::model::{ModelConfig, ModelKind};
use crate::optim::{finite_diff_gradcheck, GradCheckError, GradCheckOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

/// Pass threshold on the max relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Encoding(#[from] crate::encoding::EncodingError),
    #[error(transparent)]
    GradCheck(#[from] GradCheckError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOutcome {
    pub kind: ModelKind,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub passed: bool,
}

/// The tiny instance checked for each kind: Q=5 with memory/hidden width 4.
pub fn tiny_config(kind: ModelKind) -> ModelConfig {
    match kind {
        ModelKind::Dkvmn => ModelConfig::Dkvmn(DkvmnConfig::square(5, 3, 4)),
        ModelKind::Mann => ModelConfig::Mann(MannConfig { q: 5, n: 3, m: 4 }),
        ModelKind::Dkt => ModelConfig::Dkt(DktConfig { q: 5, d_h: 4 }),
    }
}

/// Checks every parameter coordinate of the tiny instance against central
/// differences on one fixed 6-interaction sequence.
pub fn model_gradcheck(kind: ModelKind) -> Result<GradcheckOutcome, VerifyError> {
    let model = tiny_config(kind);
    let seq = StudentSequence {
        student: "probe".into(),
        interactions: [(1, 1), (3, 0), (5, 1), (2, 1), (4, 0), (1, 0)]
            .iter()
            .map(|&(exercise, response)| Interaction { exercise, response })
            .collect(),
    };
    let rows = pad_sequence(&seq, seq.interactions.len(), model.q())?;

    let mut rng = ChaCha20Rng::seed_from_u64(42);
    let mut registry = model.init_params(0.5, &mut rng)?;
    registry.zero_grads();
    for row in &rows {
        model.sequence_grad(&mut registry, row)?;
    }

    let loss_model = model.clone();
    let loss_rows = rows.clone();
    let report = finite_diff_gradcheck(
        &mut registry,
        move |reg| {
            loss_rows
                .iter()
                .map(|r| loss_model.sequence_eval(reg, r).unwrap().loss)
                .sum()
        },
        &GradCheckOptions::default(),
    )?;

    Ok(GradcheckOutcome {
        kind,
        max_rel_err: report.max_rel_err,
        coords_checked: report.params.iter().map(|p| p.coords_checked).sum(),
        passed: report.passes(GRADCHECK_TOLERANCE),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_model_kind_passes_on_its_tiny_instance() {
        for kind in [ModelKind::Dkvmn, ModelKind::Mann, ModelKind::Dkt] {
            let outcome = model_gradcheck(kind).unwrap();
            assert!(
                outcome.passed,
                "{kind}: max rel err {}",
                outcome.max_rel_err
            );
            // Every coordinate was probed, not a subsample.
            let total = tiny_config(kind)
                .param_shapes()
                .iter()
                .map(|(_, s)| s.iter().product::<usize>())
                .sum::<usize>();
            assert_eq!(outcome.coords_checked, total);
        }
    }

    #[test]
    fn outcome_is_deterministic() {
        let a = model_gradcheck(ModelKind::Dkvmn).unwrap();
        let b = model_gradcheck(ModelKind::Dkvmn).unwrap();
        assert_eq!(a, b);
    }
}
