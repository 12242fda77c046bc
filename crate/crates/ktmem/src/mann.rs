//! Single-matrix memory-augmented baseline.
//!
//! Each interaction is embedded jointly (exercise and response together),
//! read against the memory with cosine-similarity attention sharpened by a
//! learned positive key strength, and written back with least-recently-used
//! addressing: the write weight is a gated mix of the previous read weight
//! and the previous least-used indicator, so fresh content lands either
//! where the model just read or in the slot it has touched least. The
//! output layer scores every exercise at once and the loss is aligned to
//! the next interaction in the sequence.

use crate::diff::{Tape, Var};
use crate::encoding::PaddedRow;
use crate::model::{Binding, ModelError, SequenceEval};
use crate::optim::ParamRegistry;
use crate::tensor::Tensor;
use rand::Rng;

/// Exponential decay applied to the usage accumulator each step.
pub const USAGE_DECAY: f64 = 0.9;

/// Additive floor keeping the key strength strictly positive.
pub const BETA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MannConfig {
    /// Exercise vocabulary size.
    pub q: usize,
    /// Number of memory slots.
    pub n: usize,
    /// Width of each slot (and of the joint embedding).
    pub m: usize,
}

impl MannConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [("q", self.q), ("n", self.n), ("m", self.m)] {
            if v == 0 {
                return Err(ModelError::BadConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Parameter names and shapes in registry (and checkpoint) order.
pub fn param_shapes(c: &MannConfig) -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("joint_embed", vec![2 * c.q, c.m]),
        ("memory_init", vec![c.n, c.m]),
        ("beta_raw", vec![1]),
        ("gate_raw", vec![1]),
        ("erase_w", vec![c.m, c.m]),
        ("erase_b", vec![c.m]),
        ("add_w", vec![c.m, c.m]),
        ("add_b", vec![c.m]),
        ("output_w", vec![c.m, c.q]),
        ("output_b", vec![c.q]),
    ]
}

pub fn init_params(
    c: &MannConfig,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<ParamRegistry, ModelError> {
    c.validate()?;
    let mut registry = ParamRegistry::new();
    for (name, shape) in param_shapes(c) {
        registry.add(name, Tensor::gaussian(&shape, sigma, rng))?;
    }
    Ok(registry)
}

/// Read attention: cosine similarity of the key against every memory row,
/// sharpened by the positive strength `beta`, then softmax.
pub fn cosine_read_weight(
    tape: &mut Tape,
    key: Var,
    memory: Var,
    beta: Var,
) -> Result<Var, ModelError> {
    let sims = tape.cosine_sim(key, memory)?;
    let scaled = tape.scale_vec(beta, sims)?;
    Ok(tape.softmax(scaled)?)
}

/// Usage accumulator: decays the previous usage and adds this step's read
/// and write weights. Linear in all three weight arguments.
pub fn update_usage(
    prev: &Tensor,
    read_w: &Tensor,
    write_w: &Tensor,
    decay: f64,
) -> Result<Tensor, ModelError> {
    if prev.shape() != read_w.shape() || prev.shape() != write_w.shape() {
        return Err(ModelError::BadConfig(format!(
            "usage update shapes differ: {:?} / {:?} / {:?}",
            prev.shape(),
            read_w.shape(),
            write_w.shape()
        )));
    }
    let data = prev
        .data()
        .iter()
        .zip(read_w.data())
        .zip(write_w.data())
        .map(|((&u, &r), &w)| decay * u + r + w)
        .collect();
    Ok(Tensor::from_vec(prev.shape(), data)?)
}

/// Binary indicator of the least-used slots: entry i is 1 exactly when
/// usage(i) is at most the n-th smallest usage. Ties therefore mark every
/// tied slot, so the result is one-hot only when the n-th smallest value is
/// unique.
pub fn least_used_weight(usage: &Tensor, n: usize) -> Result<Tensor, ModelError> {
    let len = usage.len();
    if n == 0 || n > len {
        return Err(ModelError::BadConfig(format!(
            "least-used rank {n} outside [1, {len}]"
        )));
    }
    let mut sorted = usage.data().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite usage"));
    let threshold = sorted[n - 1];
    let data = usage
        .data()
        .iter()
        .map(|&u| f64::from(u8::from(u <= threshold)))
        .collect();
    Ok(Tensor::from_vec(usage.shape(), data)?)
}

/// Write attention: sigmoid-gated mix of the previous read weight and the
/// previous least-used indicator.
pub fn lrua_write_weight(
    tape: &mut Tape,
    prev_read: Var,
    prev_least_used: Var,
    gate_raw: Var,
) -> Result<Var, ModelError> {
    let gate = tape.sigmoid(gate_raw)?;
    let toward_read = tape.scale_vec(gate, prev_read)?;
    let inverted = tape.one_minus(gate);
    let toward_lu = tape.scale_vec(inverted, prev_least_used)?;
    Ok(tape.add(toward_read, toward_lu)?)
}

struct Vars {
    joint_embed: Var,
    memory_init: Var,
    beta_raw: Var,
    gate_raw: Var,
    erase_w: Var,
    erase_b: Var,
    add_w: Var,
    add_b: Var,
    output_w: Var,
    output_b: Var,
}

fn bind_all(
    tape: &mut Tape,
    binding: &mut Binding,
    registry: &ParamRegistry,
) -> Result<Vars, ModelError> {
    Ok(Vars {
        joint_embed: binding.leaf(tape, registry, "joint_embed")?,
        memory_init: binding.leaf(tape, registry, "memory_init")?,
        beta_raw: binding.leaf(tape, registry, "beta_raw")?,
        gate_raw: binding.leaf(tape, registry, "gate_raw")?,
        erase_w: binding.leaf(tape, registry, "erase_w")?,
        erase_b: binding.leaf(tape, registry, "erase_b")?,
        add_w: binding.leaf(tape, registry, "add_w")?,
        add_b: binding.leaf(tape, registry, "add_b")?,
        output_w: binding.leaf(tape, registry, "output_w")?,
        output_b: binding.leaf(tape, registry, "output_b")?,
    })
}

/// Unrolls one padded row. Step t reads with the current interaction's
/// embedding, scores every exercise, and pays cross-entropy on the next
/// interaction's exercise; the write weight mixes the previous step's read
/// and least-used weights. The usage and least-used indicators are plain
/// bookkeeping outside the tape, so no gradient flows through them.
fn build_sequence(
    c: &MannConfig,
    registry: &ParamRegistry,
    row: &PaddedRow,
    tape: &mut Tape,
    binding: &mut Binding,
) -> Result<(Option<Var>, Vec<(f64, u8)>), ModelError> {
    c.validate()?;
    let p = bind_all(tape, binding, registry)?;
    let softplus_beta = tape.softplus(p.beta_raw)?;
    let beta = tape.add_const(softplus_beta, BETA_FLOOR);

    let mut memory = p.memory_init;
    // Read, usage, and least-used histories all start at zero, which makes
    // the very first write weight the zero vector.
    let mut prev_read = tape.leaf(Tensor::zeros(&[c.n]));
    let mut prev_lu = Tensor::zeros(&[c.n]);
    let mut usage = Tensor::zeros(&[c.n]);

    let mut total: Option<Var> = None;
    let mut points = Vec::new();
    let valid = row.valid_len();

    for t in 0..valid {
        let x = row.value_idx[t];
        if x == 0 || x > 2 * c.q {
            return Err(ModelError::BadConfig(format!(
                "row position {t}: interaction index {x} outside [1, {}]",
                2 * c.q
            )));
        }
        let v = tape.lookup_row(p.joint_embed, x - 1)?;
        let read_w = cosine_read_weight(tape, v, memory, beta)?;
        let content = tape.vecmat(read_w, memory)?;
        let logits = tape.affine(content, p.output_w, p.output_b)?;
        let probs = tape.sigmoid(logits)?;

        if t + 1 < valid {
            let q_next = row.key_idx[t + 1];
            if q_next == 0 || q_next > c.q {
                return Err(ModelError::BadConfig(format!(
                    "row position {}: exercise index {q_next} outside [1, {}]",
                    t + 1,
                    c.q
                )));
            }
            let label = row.response_at(t + 1, c.q);
            let scored = tape.index_elem(probs, q_next - 1)?;
            points.push((tape.value(scored).data()[0], label));
            let step_loss = tape.bce(scored, label)?;
            total = Some(match total {
                None => step_loss,
                Some(acc) => tape.add(acc, step_loss)?,
            });
        }

        let prev_lu_leaf = tape.leaf(prev_lu.clone());
        let write_w = lrua_write_weight(tape, prev_read, prev_lu_leaf, p.gate_raw)?;
        let ez = tape.affine(v, p.erase_w, p.erase_b)?;
        let erase = tape.sigmoid(ez)?;
        let az = tape.affine(v, p.add_w, p.add_b)?;
        let add = tape.tanh(az)?;
        memory = tape.erase_add_write(memory, write_w, erase, add)?;

        usage = update_usage(
            &usage,
            tape.value(read_w),
            tape.value(write_w),
            USAGE_DECAY,
        )?;
        prev_lu = least_used_weight(&usage, 1)?;
        prev_read = read_w;
    }
    Ok((total, points))
}

/// Summed next-step cross-entropy and prediction points, no gradients.
pub fn sequence_eval(
    c: &MannConfig,
    registry: &ParamRegistry,
    row: &PaddedRow,
) -> Result<SequenceEval, ModelError> {
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let (total, points) = build_sequence(c, registry, row, &mut tape, &mut binding)?;
    let loss = total.map_or(0.0, |v| tape.value(v).data()[0]);
    Ok(SequenceEval { loss, points })
}

/// Same forward pass, then accumulates d(loss)/d(param) into the registry.
pub fn sequence_grad(
    c: &MannConfig,
    registry: &mut ParamRegistry,
    row: &PaddedRow,
) -> Result<SequenceEval, ModelError> {
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let (total, points) = build_sequence(c, registry, row, &mut tape, &mut binding)?;
    match total {
        None => Ok(SequenceEval { loss: 0.0, points }),
        Some(v) => {
            let loss = tape.value(v).data()[0];
            let grads = tape.backward(v)?;
            binding.accumulate(&grads, registry)?;
            Ok(SequenceEval { loss, points })
        }
    }
}
