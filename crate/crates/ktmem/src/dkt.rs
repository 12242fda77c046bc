//! LSTM baseline for knowledge tracing.
//!
//! A single-layer LSTM consumes the interaction sequence (each step's
//! one-hot interaction index realized as an embedding-row lookup), and a
//! sigmoid output layer scores every exercise from the hidden state. Like
//! the single-matrix memory baseline, the loss is aligned to the next
//! interaction: the score of exercise q_{t+1} is trained against response
//! r_{t+1}.

use crate::diff::{Tape, Var};
use crate::encoding::PaddedRow;
use crate::model::{Binding, ModelError, SequenceEval};
use crate::optim::ParamRegistry;
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DktConfig {
    /// Exercise vocabulary size.
    pub q: usize,
    /// Hidden state width.
    pub d_h: usize,
}

impl DktConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [("q", self.q), ("d_h", self.d_h)] {
            if v == 0 {
                return Err(ModelError::BadConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Parameter names and shapes in registry (and checkpoint) order. Each gate
/// has an input-lookup matrix over the 2Q interaction indices, a recurrent
/// matrix, and a bias.
pub fn param_shapes(c: &DktConfig) -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("input_x", vec![2 * c.q, c.d_h]),
        ("input_h", vec![c.d_h, c.d_h]),
        ("input_b", vec![c.d_h]),
        ("forget_x", vec![2 * c.q, c.d_h]),
        ("forget_h", vec![c.d_h, c.d_h]),
        ("forget_b", vec![c.d_h]),
        ("output_gate_x", vec![2 * c.q, c.d_h]),
        ("output_gate_h", vec![c.d_h, c.d_h]),
        ("output_gate_b", vec![c.d_h]),
        ("cand_x", vec![2 * c.q, c.d_h]),
        ("cand_h", vec![c.d_h, c.d_h]),
        ("cand_b", vec![c.d_h]),
        ("readout_w", vec![c.d_h, c.q]),
        ("readout_b", vec![c.q]),
    ]
}

/// Fresh registry, Gaussian except the forget bias, which starts at 1 so
/// early training does not wipe the cell state.
pub fn init_params(
    c: &DktConfig,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<ParamRegistry, ModelError> {
    c.validate()?;
    let mut registry = ParamRegistry::new();
    for (name, shape) in param_shapes(c) {
        let value = if name == "forget_b" {
            Tensor::filled(&shape, 1.0)
        } else {
            Tensor::gaussian(&shape, sigma, rng)
        };
        registry.add(name, value)?;
    }
    Ok(registry)
}

struct Vars {
    input_x: Var,
    input_h: Var,
    input_b: Var,
    forget_x: Var,
    forget_h: Var,
    forget_b: Var,
    output_gate_x: Var,
    output_gate_h: Var,
    output_gate_b: Var,
    cand_x: Var,
    cand_h: Var,
    cand_b: Var,
    readout_w: Var,
    readout_b: Var,
}

fn bind_all(
    tape: &mut Tape,
    binding: &mut Binding,
    registry: &ParamRegistry,
) -> Result<Vars, ModelError> {
    Ok(Vars {
        input_x: binding.leaf(tape, registry, "input_x")?,
        input_h: binding.leaf(tape, registry, "input_h")?,
        input_b: binding.leaf(tape, registry, "input_b")?,
        forget_x: binding.leaf(tape, registry, "forget_x")?,
        forget_h: binding.leaf(tape, registry, "forget_h")?,
        forget_b: binding.leaf(tape, registry, "forget_b")?,
        output_gate_x: binding.leaf(tape, registry, "output_gate_x")?,
        output_gate_h: binding.leaf(tape, registry, "output_gate_h")?,
        output_gate_b: binding.leaf(tape, registry, "output_gate_b")?,
        cand_x: binding.leaf(tape, registry, "cand_x")?,
        cand_h: binding.leaf(tape, registry, "cand_h")?,
        cand_b: binding.leaf(tape, registry, "cand_b")?,
        readout_w: binding.leaf(tape, registry, "readout_w")?,
        readout_b: binding.leaf(tape, registry, "readout_b")?,
    })
}

/// One gate pre-activation: row x of the lookup matrix plus the recurrent
/// affine map of the previous hidden state.
fn gate_pre(
    tape: &mut Tape,
    x_row: usize,
    wx: Var,
    h: Var,
    wh: Var,
    b: Var,
) -> Result<Var, ModelError> {
    let from_x = tape.lookup_row(wx, x_row)?;
    let from_h = tape.affine(h, wh, b)?;
    Ok(tape.add(from_x, from_h)?)
}

/// Unrolls one padded row with next-step loss alignment.
fn build_sequence(
    c: &DktConfig,
    registry: &ParamRegistry,
    row: &PaddedRow,
    tape: &mut Tape,
    binding: &mut Binding,
) -> Result<(Option<Var>, Vec<(f64, u8)>), ModelError> {
    c.validate()?;
    let p = bind_all(tape, binding, registry)?;
    let mut h = tape.leaf(Tensor::zeros(&[c.d_h]));
    let mut cell = tape.leaf(Tensor::zeros(&[c.d_h]));

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
        let x_row = x - 1;

        let i_pre = gate_pre(tape, x_row, p.input_x, h, p.input_h, p.input_b)?;
        let i_gate = tape.sigmoid(i_pre)?;
        let f_pre = gate_pre(tape, x_row, p.forget_x, h, p.forget_h, p.forget_b)?;
        let f_gate = tape.sigmoid(f_pre)?;
        let o_pre = gate_pre(
            tape,
            x_row,
            p.output_gate_x,
            h,
            p.output_gate_h,
            p.output_gate_b,
        )?;
        let o_gate = tape.sigmoid(o_pre)?;
        let g_pre = gate_pre(tape, x_row, p.cand_x, h, p.cand_h, p.cand_b)?;
        let g_cand = tape.tanh(g_pre)?;

        let kept = tape.mul(f_gate, cell)?;
        let fresh = tape.mul(i_gate, g_cand)?;
        cell = tape.add(kept, fresh)?;
        let cell_act = tape.tanh(cell)?;
        h = tape.mul(o_gate, cell_act)?;

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
            let logits = tape.affine(h, p.readout_w, p.readout_b)?;
            let probs = tape.sigmoid(logits)?;
            let scored = tape.index_elem(probs, q_next - 1)?;
            points.push((tape.value(scored).data()[0], label));
            let step_loss = tape.bce(scored, label)?;
            total = Some(match total {
                None => step_loss,
                Some(acc) => tape.add(acc, step_loss)?,
            });
        }
    }
    Ok((total, points))
}

/// Summed next-step cross-entropy and prediction points, no gradients.
pub fn sequence_eval(
    c: &DktConfig,
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
    c: &DktConfig,
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
