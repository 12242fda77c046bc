//! Key-value memory model for knowledge tracing.
//!
//! A static key matrix holds one embedding per latent concept; a dynamic
//! value matrix holds the student's current state of each concept. Each
//! interaction attends over the keys with its exercise embedding (the
//! correlation weight), reads a mixture of value rows to predict the
//! response, and only then writes the observed interaction back into the
//! value matrix through gated erase and add vectors. The same correlation
//! weight drives both the read and the write.

use crate::diff::{Tape, Var};
use crate::encoding::PaddedRow;
use crate::model::{param, Binding, ModelError, SequenceEval};
use crate::optim::ParamRegistry;
use crate::tensor::{sigmoid, softmax_slice, Tensor};
use rand::Rng;

/// Dimensions of one model instance. `d_k`/`d_v`/`d_f` are the key,
/// value, and summary widths; published grids use a single width for all
/// three, so [`DkvmnConfig::square`] is the usual constructor.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DkvmnConfig {
    /// Exercise vocabulary size.
    pub q: usize,
    /// Number of memory slots (latent concepts).
    pub n: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_f: usize,
}

impl DkvmnConfig {
    /// One width for the key, value, and summary dimensions.
    pub fn square(q: usize, n: usize, d: usize) -> Self {
        DkvmnConfig {
            q,
            n,
            d_k: d,
            d_v: d,
            d_f: d,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("q", self.q),
            ("n", self.n),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
            ("d_f", self.d_f),
        ] {
            if v == 0 {
                return Err(ModelError::BadConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Parameter names and shapes in registry (and checkpoint) order.
pub fn param_shapes(c: &DkvmnConfig) -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("key_embed", vec![c.q, c.d_k]),
        ("value_embed", vec![2 * c.q, c.d_v]),
        ("key_matrix", vec![c.n, c.d_k]),
        ("value_init", vec![c.n, c.d_v]),
        ("summary_w", vec![c.d_v + c.d_k, c.d_f]),
        ("summary_b", vec![c.d_f]),
        ("output_w", vec![c.d_f, 1]),
        ("output_b", vec![1]),
        ("erase_w", vec![c.d_v, c.d_v]),
        ("erase_b", vec![c.d_v]),
        ("add_w", vec![c.d_v, c.d_v]),
        ("add_b", vec![c.d_v]),
    ]
}

/// Fresh registry with every tensor drawn from N(0, sigma^2).
pub fn init_params(
    c: &DkvmnConfig,
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

/// Attention of an exercise key over the concept keys: softmax of the inner
/// products with each key-matrix row.
pub fn correlation_weight(
    tape: &mut Tape,
    key: Var,
    key_matrix: Var,
) -> Result<Var, ModelError> {
    let logits = tape.matvec(key_matrix, key)?;
    Ok(tape.softmax(logits)?)
}

/// Read content: the attention-weighted mixture of value-memory rows.
pub fn read(tape: &mut Tape, value_memory: Var, weight: Var) -> Result<Var, ModelError> {
    Ok(tape.vecmat(weight, value_memory)?)
}

/// Summary-then-output head. The read content is concatenated before the
/// exercise key; returns `(summary, probability)`.
pub fn predict(
    tape: &mut Tape,
    read_content: Var,
    key: Var,
    summary_w: Var,
    summary_b: Var,
    output_w: Var,
    output_b: Var,
) -> Result<(Var, Var), ModelError> {
    let joined = tape.concat(read_content, key)?;
    let pre = tape.affine(joined, summary_w, summary_b)?;
    let summary = tape.tanh(pre)?;
    let logit = tape.affine(summary, output_w, output_b)?;
    let prob = tape.sigmoid(logit)?;
    Ok((summary, prob))
}

/// Erase-then-add write of one interaction embedding into the value memory
/// under the given weight. Slots with zero weight are untouched.
pub fn write(
    tape: &mut Tape,
    value_memory: Var,
    weight: Var,
    interaction: Var,
    erase_w: Var,
    erase_b: Var,
    add_w: Var,
    add_b: Var,
) -> Result<Var, ModelError> {
    let ez = tape.affine(interaction, erase_w, erase_b)?;
    let erase = tape.sigmoid(ez)?;
    let az = tape.affine(interaction, add_w, add_b)?;
    let add = tape.tanh(az)?;
    Ok(tape.erase_add_write(value_memory, weight, erase, add)?)
}

struct Vars {
    key_embed: Var,
    value_embed: Var,
    key_matrix: Var,
    value_init: Var,
    summary_w: Var,
    summary_b: Var,
    output_w: Var,
    output_b: Var,
    erase_w: Var,
    erase_b: Var,
    add_w: Var,
    add_b: Var,
}

fn bind_all(
    tape: &mut Tape,
    binding: &mut Binding,
    registry: &ParamRegistry,
) -> Result<Vars, ModelError> {
    Ok(Vars {
        key_embed: binding.leaf(tape, registry, "key_embed")?,
        value_embed: binding.leaf(tape, registry, "value_embed")?,
        key_matrix: binding.leaf(tape, registry, "key_matrix")?,
        value_init: binding.leaf(tape, registry, "value_init")?,
        summary_w: binding.leaf(tape, registry, "summary_w")?,
        summary_b: binding.leaf(tape, registry, "summary_b")?,
        output_w: binding.leaf(tape, registry, "output_w")?,
        output_b: binding.leaf(tape, registry, "output_b")?,
        erase_w: binding.leaf(tape, registry, "erase_w")?,
        erase_b: binding.leaf(tape, registry, "erase_b")?,
        add_w: binding.leaf(tape, registry, "add_w")?,
        add_b: binding.leaf(tape, registry, "add_b")?,
    })
}

fn check_indices(c: &DkvmnConfig, row: &PaddedRow, t: usize) -> Result<(usize, usize), ModelError> {
    let q = row.key_idx[t];
    if q == 0 || q > c.q {
        return Err(ModelError::BadConfig(format!(
            "row position {t}: exercise index {q} outside [1, {}]",
            c.q
        )));
    }
    let x = row.value_idx[t];
    if x == 0 || x > 2 * c.q {
        return Err(ModelError::BadConfig(format!(
            "row position {t}: interaction index {x} outside [1, {}]",
            2 * c.q
        )));
    }
    Ok((q, x))
}

/// Unrolls one padded row on the tape. Each valid step predicts the current
/// response from the pre-write memory, then writes the observed interaction.
fn build_sequence(
    c: &DkvmnConfig,
    registry: &ParamRegistry,
    row: &PaddedRow,
    tape: &mut Tape,
    binding: &mut Binding,
) -> Result<(Option<Var>, Vec<(f64, u8)>), ModelError> {
    c.validate()?;
    let p = bind_all(tape, binding, registry)?;
    let mut memory = p.value_init;
    let mut total: Option<Var> = None;
    let mut points = Vec::new();

    for t in 0..row.valid_len() {
        let (q, x) = check_indices(c, row, t)?;
        let label = row.response_at(t, c.q);

        let key = tape.lookup_row(p.key_embed, q - 1)?;
        let weight = correlation_weight(tape, key, p.key_matrix)?;
        let content = read(tape, memory, weight)?;
        let (_, prob) = predict(
            tape,
            content,
            key,
            p.summary_w,
            p.summary_b,
            p.output_w,
            p.output_b,
        )?;
        points.push((tape.value(prob).data()[0], label));

        let step_loss = tape.bce(prob, label)?;
        total = Some(match total {
            None => step_loss,
            Some(acc) => tape.add(acc, step_loss)?,
        });

        let interaction = tape.lookup_row(p.value_embed, x - 1)?;
        memory = write(
            tape,
            memory,
            weight,
            interaction,
            p.erase_w,
            p.erase_b,
            p.add_w,
            p.add_b,
        )?;
    }
    Ok((total, points))
}

/// Summed cross-entropy and per-step predictions for one row, no gradients.
pub fn sequence_eval(
    c: &DkvmnConfig,
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
    c: &DkvmnConfig,
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

/// Correlation weight of exercise `q` computed without a tape.
fn plain_correlation(
    c: &DkvmnConfig,
    registry: &ParamRegistry,
    q: usize,
) -> Result<Vec<f64>, ModelError> {
    if q == 0 || q > c.q {
        return Err(ModelError::BadConfig(format!(
            "exercise index {q} outside [1, {}]",
            c.q
        )));
    }
    let embed = param(registry, "key_embed")?;
    let keys = param(registry, "key_matrix")?;
    let key = embed.row(q - 1);
    let logits: Vec<f64> = (0..keys.rows())
        .map(|i| keys.row(i).iter().zip(key).map(|(a, b)| a * b).sum())
        .collect();
    Ok(softmax_slice(&logits))
}

/// Q×N matrix whose row q is the correlation weight of exercise q; each row
/// lies on the simplex. This is the concept-discovery signal.
pub fn correlation_weight_matrix(
    c: &DkvmnConfig,
    registry: &ParamRegistry,
) -> Result<Tensor, ModelError> {
    c.validate()?;
    let mut data = Vec::with_capacity(c.q * c.n);
    for q in 1..=c.q {
        data.extend(plain_correlation(c, registry, q)?);
    }
    Ok(Tensor::matrix(c.q, c.n, data)?)
}

/// One erase-then-add write applied outside any tape; used to replay a
/// student's memory trajectory during analysis.
pub fn plain_write(
    c: &DkvmnConfig,
    registry: &ParamRegistry,
    memory: &Tensor,
    exercise: usize,
    response: u8,
) -> Result<Tensor, ModelError> {
    let weight = plain_correlation(c, registry, exercise)?;
    let x = crate::encoding::encode_value_index(exercise, response, c.q)
        .map_err(|e| ModelError::BadConfig(e.to_string()))?;
    let v = param(registry, "value_embed")?.row(x - 1).to_vec();
    let erase = plain_affine_map(&v, param(registry, "erase_w")?, param(registry, "erase_b")?)
        .into_iter()
        .map(sigmoid)
        .collect::<Vec<_>>();
    let add = plain_affine_map(&v, param(registry, "add_w")?, param(registry, "add_b")?)
        .into_iter()
        .map(f64::tanh)
        .collect::<Vec<_>>();

    let mut out = memory.clone();
    for (i, &wi) in weight.iter().enumerate() {
        let dst = out.row_mut(i);
        for j in 0..dst.len() {
            dst[j] = dst[j] * (1.0 - wi * erase[j]) + wi * add[j];
        }
    }
    Ok(out)
}

fn plain_affine_map(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let mut out = b.data().to_vec();
    for (i, &xi) in x.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(w.row(i)) {
            *o += xi * v;
        }
    }
    out
}

/// Per-concept mastery summary of a value memory: slot i is read with a
/// one-hot weight and pushed through the summary/output head with the
/// exercise-embedding half of the summary weights masked to zero (so the
/// usual second concatenand, supplied here as a zero vector, cannot
/// contribute).
pub fn depict_knowledge_state(
    c: &DkvmnConfig,
    registry: &ParamRegistry,
    memory: &Tensor,
) -> Result<Vec<f64>, ModelError> {
    if memory.shape() != [c.n, c.d_v] {
        return Err(ModelError::BadConfig(format!(
            "value memory shape {:?} does not match config [{}, {}]",
            memory.shape(),
            c.n,
            c.d_v
        )));
    }
    let summary_w = param(registry, "summary_w")?;
    let summary_b = param(registry, "summary_b")?;
    let output_w = param(registry, "output_w")?;
    let output_b = param(registry, "output_b")?;

    let mut mastery = Vec::with_capacity(c.n);
    for i in 0..c.n {
        let content = memory.row(i);
        // Only the first d_v input rows of summary_w participate: the
        // masked embedding half multiplies the zero vector.
        let mut pre = summary_b.data().to_vec();
        for (r, &xr) in content.iter().enumerate() {
            for (o, v) in pre.iter_mut().zip(summary_w.row(r)) {
                *o += xr * v;
            }
        }
        let summary: Vec<f64> = pre.into_iter().map(f64::tanh).collect();
        let logit = output_b.data()[0]
            + summary
                .iter()
                .enumerate()
                .map(|(j, s)| s * output_w.row(j)[0])
                .sum::<f64>();
        mastery.push(sigmoid(logit));
    }
    Ok(mastery)
}
