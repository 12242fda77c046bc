//! Named parameter store, SGD with momentum, global-norm gradient clipping,
//! and a central-difference gradient checker.
//!
//! The registry keeps parameters in insertion order and every consumer
//! iterates in that order, so checkpoints, updates, and reports never depend
//! on hash-map iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::HashMap;
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("parameter '{0}' registered twice")]
    DuplicateName(String),
    #[error("momentum {0} must lie in [0, 1)")]
    BadMomentum(f64),
    #[error("clip threshold {0} must be positive and finite")]
    BadClipThreshold(f64),
    #[error("learning rate {0} must be non-negative and finite")]
    BadLearningRate(f64),
    #[error("optimizer state holds {expected} tensors, registry has {found}")]
    StateMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Index of a parameter in its registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamSlot(usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

impl ParamEntry {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }
}

/// Insertion-ordered name -> (value, gradient) store.
#[derive(Debug, Clone, Default)]
pub struct ParamRegistry {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamSlot, OptimError> {
        if self.index.contains_key(name) {
            return Err(OptimError::DuplicateName(name.to_string()));
        }
        let grad = Tensor::zeros(value.shape());
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad,
        });
        Ok(ParamSlot(self.entries.len() - 1))
    }

    pub fn slot(&self, name: &str) -> Option<ParamSlot> {
        self.index.get(name).copied().map(ParamSlot)
    }

    pub fn name(&self, slot: ParamSlot) -> &str {
        &self.entries[slot.0].name
    }

    pub fn value(&self, slot: ParamSlot) -> &Tensor {
        &self.entries[slot.0].value
    }

    pub fn value_mut(&mut self, slot: ParamSlot) -> &mut Tensor {
        &mut self.entries[slot.0].value
    }

    pub fn grad(&self, slot: ParamSlot) -> &Tensor {
        &self.entries[slot.0].grad
    }

    /// Adds `delta` into the stored gradient. Shapes must agree.
    pub fn accumulate_grad(&mut self, slot: ParamSlot, delta: &Tensor) -> Result<(), OptimError> {
        let entry = &mut self.entries[slot.0];
        if entry.grad.shape() != delta.shape() {
            return Err(OptimError::Tensor(TensorError::ShapeMismatch {
                op: "accumulate_grad",
                left: entry.grad.shape().to_vec(),
                right: delta.shape().to_vec(),
            }));
        }
        entry.grad.add_assign(delta);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for entry in &mut self.entries {
            for g in entry.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Number of registered tensors.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar parameter count across all tensors.
    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Entries in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    /// L2 norm over the concatenation of all gradients.
    pub fn global_grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.grad.data().iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    fn slots(&self) -> impl Iterator<Item = ParamSlot> {
        (0..self.entries.len()).map(ParamSlot)
    }
}

/// Momentum buffers, one per registry entry, in registry order.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    velocity: Vec<Tensor>,
    momentum: f64,
}

impl OptimizerState {
    pub fn new(registry: &ParamRegistry, momentum: f64) -> Result<Self, OptimError> {
        if !(0.0..1.0).contains(&momentum) || !momentum.is_finite() {
            return Err(OptimError::BadMomentum(momentum));
        }
        Ok(OptimizerState {
            velocity: registry
                .entries()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect(),
            momentum,
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn velocity(&self, slot: ParamSlot) -> &Tensor {
        &self.velocity[slot.0]
    }
}

/// Rescales all gradients so their global L2 norm is at most `threshold`,
/// leaving them untouched when already inside. Returns the pre-clip norm.
pub fn clip_global_norm(
    registry: &mut ParamRegistry,
    threshold: f64,
) -> Result<f64, OptimError> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(OptimError::BadClipThreshold(threshold));
    }
    let norm = registry.global_grad_norm();
    if norm > threshold {
        let scale = threshold / norm;
        for entry in &mut registry.entries {
            for g in entry.grad.data_mut() {
                *g *= scale;
            }
        }
    }
    Ok(norm)
}

/// One momentum update: v <- mu * v + g, theta <- theta - lr * v.
/// Gradients are zeroed afterwards. With lr = 0 only the velocity moves and
/// parameter values stay bitwise identical.
pub fn sgd_momentum_step(
    registry: &mut ParamRegistry,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<(), OptimError> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(OptimError::BadLearningRate(lr));
    }
    if state.velocity.len() != registry.len() {
        return Err(OptimError::StateMismatch {
            expected: state.velocity.len(),
            found: registry.len(),
        });
    }
    let mu = state.momentum;
    for (entry, vel) in registry.entries.iter_mut().zip(&mut state.velocity) {
        for ((v, g), theta) in vel
            .data_mut()
            .iter_mut()
            .zip(entry.grad.data())
            .zip(entry.value.data_mut())
        {
            *v = mu * *v + g;
            if lr != 0.0 {
                *theta -= lr * *v;
            }
        }
    }
    registry.zero_grads();
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Base step; the per-coordinate step is eps * max(1, |theta_i|).
    pub eps: f64,
    /// Cap on coordinates probed per tensor; the rest are subsampled with
    /// the seeded generator. `usize::MAX` probes everything.
    pub max_coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-4,
            max_coords_per_tensor: usize::MAX,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("loss is not deterministic: {first} then {second} on identical parameters")]
    NonDeterministic { first: f64, second: f64 },
    #[error("loss is not finite at the evaluation point: {0}")]
    NonFiniteLoss(f64),
}

/// Central-difference check of the gradients stored in the registry.
///
/// At entry `registry` must hold, per parameter, the analytic gradient of
/// `loss_fn` at the current values. `loss_fn` must be a pure function of the
/// parameter values; it is invoked twice up front and rejected if the two
/// losses differ bitwise. Relative error per coordinate is
/// |a - n| / max(|a|, |n|, 1e-8).
pub fn finite_diff_gradcheck<F>(
    registry: &mut ParamRegistry,
    mut loss_fn: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, GradCheckError>
where
    F: FnMut(&ParamRegistry) -> f64,
{
    let first = loss_fn(registry);
    let second = loss_fn(registry);
    if first.to_bits() != second.to_bits() {
        return Err(GradCheckError::NonDeterministic { first, second });
    }
    if !first.is_finite() {
        return Err(GradCheckError::NonFiniteLoss(first));
    }

    let analytic: Vec<Tensor> = registry.entries().map(|e| e.grad.clone()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut params = Vec::with_capacity(registry.len());
    let mut global_max = 0.0f64;

    for slot in registry.slots().collect::<Vec<_>>() {
        let n = registry.value(slot).len();
        let coords: Vec<usize> = if n <= opts.max_coords_per_tensor {
            (0..n).collect()
        } else {
            let mut picked =
                rand::seq::index::sample(&mut rng, n, opts.max_coords_per_tensor).into_vec();
            picked.sort_unstable();
            picked
        };

        let mut check = ParamCheck {
            name: registry.name(slot).to_string(),
            coords_checked: coords.len(),
            max_rel_err: 0.0,
            worst_coord: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };

        for j in coords {
            let orig = registry.value(slot).data()[j];
            let h = opts.eps * orig.abs().max(1.0);

            registry.value_mut(slot).data_mut()[j] = orig + h;
            let plus = loss_fn(registry);
            registry.value_mut(slot).data_mut()[j] = orig - h;
            let minus = loss_fn(registry);
            registry.value_mut(slot).data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[slot.0].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst_coord = j;
                check.worst_analytic = a;
                check.worst_numeric = numeric;
            }
        }

        global_max = global_max.max(check.max_rel_err);
        params.push(check);
    }

    Ok(GradCheckReport {
        params,
        max_rel_err: global_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn simple_registry() -> (ParamRegistry, ParamSlot) {
        let mut reg = ParamRegistry::new();
        let slot = reg.add("theta", Tensor::scalar(1.0)).unwrap();
        (reg, slot)
    }

    #[test]
    fn registry_preserves_insertion_order_and_rejects_duplicates() {
        let mut reg = ParamRegistry::new();
        for name in ["zeta", "alpha", "mid"] {
            reg.add(name, Tensor::scalar(0.0)).unwrap();
        }
        let names: Vec<&str> = reg.entries().map(|e| e.name()).collect();
        assert_eq!(names, ["zeta", "alpha", "mid"]);
        assert!(matches!(
            reg.add("alpha", Tensor::scalar(0.0)),
            Err(OptimError::DuplicateName(_))
        ));
        assert_eq!(reg.total_values(), 3);
    }

    #[test]
    fn two_momentum_steps_match_hand_computation() {
        // g = 2 both steps, lr = 0.1, mu = 0.9:
        // v1 = 2, theta = 1 - 0.2 = 0.8
        // v2 = 0.9 * 2 + 2 = 3.8, theta = 0.8 - 0.38 = 0.42
        let (mut reg, slot) = simple_registry();
        let mut state = OptimizerState::new(&reg, 0.9).unwrap();

        reg.accumulate_grad(slot, &Tensor::scalar(2.0)).unwrap();
        sgd_momentum_step(&mut reg, &mut state, 0.1).unwrap();
        assert!((reg.value(slot).data()[0] - 0.8).abs() < 1e-15);

        reg.accumulate_grad(slot, &Tensor::scalar(2.0)).unwrap();
        sgd_momentum_step(&mut reg, &mut state, 0.1).unwrap();
        assert!((state.velocity(slot).data()[0] - 3.8).abs() < 1e-15);
        assert!((reg.value(slot).data()[0] - 0.42).abs() < 1e-15);
        assert_eq!(reg.grad(slot).data()[0], 0.0, "gradients zeroed after step");
    }

    #[test]
    fn zero_momentum_reduces_to_plain_sgd() {
        let (mut reg, slot) = simple_registry();
        let mut state = OptimizerState::new(&reg, 0.0).unwrap();
        reg.accumulate_grad(slot, &Tensor::scalar(3.0)).unwrap();
        sgd_momentum_step(&mut reg, &mut state, 0.5).unwrap();
        assert!((reg.value(slot).data()[0] - (1.0 - 1.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_touches_velocity_but_not_values() {
        let (mut reg, slot) = simple_registry();
        let before = reg.value(slot).data()[0].to_bits();
        let mut state = OptimizerState::new(&reg, 0.9).unwrap();
        reg.accumulate_grad(slot, &Tensor::scalar(7.0)).unwrap();
        sgd_momentum_step(&mut reg, &mut state, 0.0).unwrap();
        assert_eq!(reg.value(slot).data()[0].to_bits(), before);
        assert_eq!(state.velocity(slot).data()[0], 7.0);
    }

    #[test]
    fn momentum_outside_range_is_rejected() {
        let (reg, _) = simple_registry();
        assert!(matches!(
            OptimizerState::new(&reg, 1.0),
            Err(OptimError::BadMomentum(_))
        ));
        assert!(matches!(
            OptimizerState::new(&reg, -0.1),
            Err(OptimError::BadMomentum(_))
        ));
    }

    #[test]
    fn clip_scales_only_above_threshold() {
        let mut reg = ParamRegistry::new();
        let a = reg.add("a", Tensor::vector(vec![0.0, 0.0])).unwrap();
        let b = reg.add("b", Tensor::scalar(0.0)).unwrap();

        // Norm = sqrt(3^2 + 4^2 + 12^2) = 13.
        reg.accumulate_grad(a, &Tensor::vector(vec![3.0, 4.0])).unwrap();
        reg.accumulate_grad(b, &Tensor::scalar(12.0)).unwrap();

        let norm = clip_global_norm(&mut reg, 6.5).unwrap();
        assert!((norm - 13.0).abs() < 1e-12);
        assert!((reg.global_grad_norm() - 6.5).abs() < 1e-12);
        assert!((reg.grad(a).data()[0] - 1.5).abs() < 1e-12);

        // Already inside: bitwise untouched.
        let bits_before: Vec<u64> = reg.grad(a).data().iter().map(|g| g.to_bits()).collect();
        let norm = clip_global_norm(&mut reg, 50.0).unwrap();
        assert!((norm - 6.5).abs() < 1e-12);
        let bits_after: Vec<u64> = reg.grad(a).data().iter().map(|g| g.to_bits()).collect();
        assert_eq!(bits_before, bits_after);
    }

    #[test]
    fn clip_rejects_bad_threshold() {
        let (mut reg, _) = simple_registry();
        assert!(clip_global_norm(&mut reg, 0.0).is_err());
        assert!(clip_global_norm(&mut reg, f64::NAN).is_err());
    }

    /// loss = sum_i x_i^2 over a two-tensor registry; gradient is 2x.
    fn quadratic_loss(reg: &ParamRegistry) -> f64 {
        reg.entries()
            .flat_map(|e| e.value().data())
            .map(|x| x * x)
            .sum()
    }

    #[test]
    fn gradcheck_accepts_correct_gradients() {
        let mut reg = ParamRegistry::new();
        let a = reg.add("a", Tensor::vector(vec![0.5, -1.5, 2.0])).unwrap();
        let b = reg.add("b", Tensor::scalar(-0.25)).unwrap();
        let ga = Tensor::vector(reg.value(a).data().iter().map(|x| 2.0 * x).collect());
        let gb = Tensor::scalar(reg.value(b).data()[0] * 2.0);
        reg.accumulate_grad(a, &ga).unwrap();
        reg.accumulate_grad(b, &gb).unwrap();

        let report =
            finite_diff_gradcheck(&mut reg, quadratic_loss, &GradCheckOptions::default()).unwrap();
        assert!(report.passes(1e-6), "max rel err {}", report.max_rel_err);
        assert_eq!(report.params.len(), 2);
    }

    #[test]
    fn gradcheck_flags_a_wrong_gradient() {
        let mut reg = ParamRegistry::new();
        let a = reg.add("a", Tensor::vector(vec![0.5, -1.5])).unwrap();
        // Correct would be 2x; sign-flip one coordinate.
        reg.accumulate_grad(a, &Tensor::vector(vec![1.0, 3.0])).unwrap();

        let report =
            finite_diff_gradcheck(&mut reg, quadratic_loss, &GradCheckOptions::default()).unwrap();
        assert!(!report.passes(1e-4));
        assert_eq!(report.params[0].worst_coord, 1);
    }

    #[test]
    fn gradcheck_restores_parameters_exactly() {
        let mut reg = ParamRegistry::new();
        let a = reg.add("a", Tensor::vector(vec![0.1, 0.7, -0.3])).unwrap();
        let bits: Vec<u64> = reg.value(a).data().iter().map(|v| v.to_bits()).collect();
        finite_diff_gradcheck(&mut reg, quadratic_loss, &GradCheckOptions::default()).unwrap();
        let after: Vec<u64> = reg.value(a).data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, after);
    }

    #[test]
    fn gradcheck_rejects_non_deterministic_loss() {
        let mut reg = ParamRegistry::new();
        reg.add("a", Tensor::scalar(1.0)).unwrap();
        let counter = Cell::new(0.0f64);
        let noisy = |_: &ParamRegistry| {
            counter.set(counter.get() + 1.0);
            counter.get()
        };
        assert!(matches!(
            finite_diff_gradcheck(&mut reg, noisy, &GradCheckOptions::default()),
            Err(GradCheckError::NonDeterministic { .. })
        ));
    }

    #[test]
    fn gradcheck_subsamples_coordinates_deterministically() {
        let mut reg = ParamRegistry::new();
        let a = reg.add("a", Tensor::vector((0..100).map(f64::from).collect())).unwrap();
        let ga = Tensor::vector(reg.value(a).data().iter().map(|x| 2.0 * x).collect());
        reg.accumulate_grad(a, &ga).unwrap();
        let opts = GradCheckOptions {
            max_coords_per_tensor: 10,
            ..Default::default()
        };
        let r1 = finite_diff_gradcheck(&mut reg, quadratic_loss, &opts).unwrap();
        assert_eq!(r1.params[0].coords_checked, 10);
        assert!(r1.passes(1e-6));
    }
}
