//! Post-training analysis: concept discovery from correlation weights and
//! per-concept knowledge-state traces, with comma-separated exporters.
//!
//! Both analyses read a key-value memory checkpoint; the other model kinds
//! have no concept-structured memory and are rejected.

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::dkvmn::{correlation_weight_matrix, depict_knowledge_state, plain_write, DkvmnConfig};
use crate::encoding::StudentSequence;
use crate::metrics::{adjusted_mutual_information, MetricsError};
use crate::model::{ModelConfig, ModelError, ModelKind};
use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("ground truth labels {found} exercises, the model has {expected}")]
    GroundTruthLength { expected: usize, found: usize },
}

/// Exercise-to-concept assignment read off the correlation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptDiscoveryReport {
    /// Original exercise tags, row order of `weights`.
    pub exercise_tags: Vec<i64>,
    /// Q×N correlation-weight matrix; every row sums to 1.
    pub weights: Tensor,
    /// 1-based concept per exercise: the argmax weight, ties resolved
    /// toward the lowest concept index.
    pub clusters: Vec<usize>,
    /// Each exercise's winning weight, a direct sparsity readout.
    pub max_weight: Vec<f64>,
    /// Number of concepts that won at least one exercise.
    pub nonempty_clusters: usize,
    /// Agreement with supplied ground-truth labels, when given.
    pub ami: Option<f64>,
}

fn dkvmn_config(checkpoint: &Checkpoint) -> Result<&DkvmnConfig, AnalysisError> {
    checkpoint.expect_kind(ModelKind::Dkvmn)?;
    match &checkpoint.model {
        ModelConfig::Dkvmn(c) => Ok(c),
        _ => unreachable!("kind was just checked"),
    }
}

/// Assigns every exercise to the concept with the largest correlation
/// weight. No threshold is involved; the argmax is the whole rule. With
/// ground truth supplied, reports adjusted mutual information against it.
pub fn discover_concepts(
    checkpoint: &Checkpoint,
    ground_truth: Option<&[usize]>,
) -> Result<ConceptDiscoveryReport, AnalysisError> {
    let c = dkvmn_config(checkpoint)?;
    if let Some(truth) = ground_truth {
        if truth.len() != c.q {
            return Err(AnalysisError::GroundTruthLength {
                expected: c.q,
                found: truth.len(),
            });
        }
    }

    let registry = checkpoint.registry()?;
    let weights = correlation_weight_matrix(c, &registry)?;

    let mut clusters = Vec::with_capacity(c.q);
    let mut max_weight = Vec::with_capacity(c.q);
    for q in 0..c.q {
        let row = weights.row(q);
        let mut best = 0usize;
        for (i, &w) in row.iter().enumerate() {
            if w > row[best] {
                best = i;
            }
        }
        clusters.push(best + 1);
        max_weight.push(row[best]);
    }

    let mut seen = vec![false; c.n];
    for &cl in &clusters {
        seen[cl - 1] = true;
    }
    let nonempty_clusters = seen.iter().filter(|s| **s).count();

    let ami = match ground_truth {
        Some(truth) => Some(adjusted_mutual_information(&clusters, truth)?),
        None => None,
    };

    Ok(ConceptDiscoveryReport {
        exercise_tags: checkpoint.vocabulary.clone(),
        weights,
        clusters,
        max_weight,
        nonempty_clusters,
        ami,
    })
}

/// One student's concept-mastery trajectory: the initial state, then the
/// state after each interaction's write.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeStateTrace {
    pub student: String,
    /// Dense exercise ids, one per interaction.
    pub exercises: Vec<usize>,
    pub responses: Vec<u8>,
    /// L+1 rows of N per-concept mastery values in (0,1); row 0 is the
    /// state before any interaction.
    pub states: Vec<Vec<f64>>,
}

/// Replays a sequence through the value memory outside any tape, reading
/// the per-concept mastery summary before the first write and after every
/// write.
pub fn trace_knowledge_state(
    checkpoint: &Checkpoint,
    seq: &StudentSequence,
) -> Result<KnowledgeStateTrace, AnalysisError> {
    let c = dkvmn_config(checkpoint)?;
    let registry = checkpoint.registry()?;

    let mut memory = crate::model::param(&registry, "value_init")?.clone();
    let mut states = Vec::with_capacity(seq.interactions.len() + 1);
    states.push(depict_knowledge_state(c, &registry, &memory)?);

    let mut exercises = Vec::with_capacity(seq.interactions.len());
    let mut responses = Vec::with_capacity(seq.interactions.len());
    for it in &seq.interactions {
        memory = plain_write(c, &registry, &memory, it.exercise, it.response)?;
        states.push(depict_knowledge_state(c, &registry, &memory)?);
        exercises.push(it.exercise);
        responses.push(it.response);
    }

    Ok(KnowledgeStateTrace {
        student: seq.student.clone(),
        exercises,
        responses,
        states,
    })
}

fn concept_header(n: usize) -> String {
    (1..=n)
        .map(|i| format!("concept_{i}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Full weight matrix as text: one exercise per row, original tag first.
pub fn weight_matrix_csv(report: &ConceptDiscoveryReport) -> String {
    let n = report.weights.shape()[1];
    let mut out = format!("exercise,{}\n", concept_header(n));
    for (q, &tag) in report.exercise_tags.iter().enumerate() {
        let row = report
            .weights
            .row(q)
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&format!("{tag},{row}\n"));
    }
    out
}

/// Cluster assignment as text: exercise, winning concept, winning weight.
pub fn clusters_csv(report: &ConceptDiscoveryReport) -> String {
    let mut out = String::from("exercise,concept,max_weight\n");
    for (q, &tag) in report.exercise_tags.iter().enumerate() {
        out.push_str(&format!(
            "{tag},{},{}\n",
            report.clusters[q], report.max_weight[q]
        ));
    }
    out
}

/// Trace as text: one row per timestep, the initial state at t=0 with
/// empty exercise and response fields.
pub fn trace_csv(trace: &KnowledgeStateTrace) -> String {
    let n = trace.states.first().map_or(0, Vec::len);
    let mut out = format!("t,exercise,response,{}\n", concept_header(n));
    for (t, state) in trace.states.iter().enumerate() {
        let (e, r) = if t == 0 {
            (String::new(), String::new())
        } else {
            (
                trace.exercises[t - 1].to_string(),
                trace.responses[t - 1].to_string(),
            )
        };
        let row = state
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&format!("{t},{e},{r},{row}\n"));
    }
    out
}
