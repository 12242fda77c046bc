//! Training orchestration: batching, the epoch loop, the learning-rate
//! schedule, validation-based model selection with early stopping, and
//! repeated seeded runs with mean±std reporting.
//!
//! Everything reported is a pure function of (config, seed, data) except the
//! per-epoch wall-clock, which is measured and excluded from determinism
//! guarantees and from exported files.

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::encoding::{pad_sequence, EncodingError, PaddedRow, StudentSequence, Vocabulary};
use crate::metrics::{auc, lr_schedule, mean_std, MetricsError, ScoredLabels};
use crate::model::{ModelConfig, ModelError};
use crate::optim::{clip_global_norm, sgd_momentum_step, OptimError, OptimizerState};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::time::Instant;
use thiserror::Error;

/// Momentum coefficient for every run.
pub const MOMENTUM: f64 = 0.9;
/// Global gradient-norm clipping threshold.
pub const CLIP_THRESHOLD: f64 = 50.0;
/// Cap applied by the default chunk-window rule.
pub const DEFAULT_WINDOW_CAP: usize = 200;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("train config: {0}")]
    BadConfig(String),
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("{0} set yields no prediction points under this model")]
    NoPredictionPoints(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: training diverged")]
    Diverged { epoch: usize, batch: usize },
    #[error("repeated runs need at least 2 seeds, got {0}")]
    TooFewSeeds(usize),
    #[error("seed {seed} diverged: {source}")]
    SeedFailed {
        seed: u64,
        source: Box<TrainError>,
    },
}

/// Everything a single run needs. `t_max` is the chunk window; `None` means
/// min(200, longest sequence in the training set).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub sigma: f64,
    pub seed: u64,
    pub t_max: Option<usize>,
}

impl TrainConfig {
    /// Repo defaults: batch 32, 100-epoch cap, patience 20, init σ 0.05,
    /// and a per-model initial learning rate (0.01 for the memory models,
    /// 0.05 for the LSTM baseline).
    pub fn defaults(model: ModelConfig) -> Self {
        let initial_lr = match model {
            ModelConfig::Dkvmn(_) | ModelConfig::Mann(_) => 0.01,
            ModelConfig::Dkt(_) => 0.05,
        };
        TrainConfig {
            model,
            batch_size: 32,
            initial_lr,
            epochs: 100,
            patience: 20,
            sigma: 0.05,
            seed: 0,
            t_max: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch size must be positive".into()));
        }
        if !(self.initial_lr.is_finite() && self.initial_lr >= 0.0) {
            return Err(TrainError::BadConfig(format!(
                "initial learning rate must be finite and nonnegative, got {}",
                self.initial_lr
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epoch cap must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::BadConfig("patience must be at least 1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(TrainError::BadConfig(format!(
                "init sigma must be finite and positive, got {}",
                self.sigma
            )));
        }
        if self.t_max == Some(0) {
            return Err(TrainError::BadConfig("chunk window must be positive".into()));
        }
        Ok(())
    }
}

/// One epoch's reported numbers. Loss is the per-valid-prediction-point
/// mean; both AUCs pool every prediction point of the split.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_auc: f64,
    pub valid_auc: f64,
}

/// Full record of one training run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_valid_auc: f64,
    /// Filled by `evaluate` / `repeated_runs`, not by `train` itself.
    pub test_auc: Option<f64>,
    pub param_count: usize,
    /// Measured wall-clock per epoch; excluded from determinism guarantees
    /// and from exported files.
    pub epoch_seconds: Vec<f64>,
}

impl RunReport {
    /// The training-curve file: one header plus one row per epoch.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_auc,valid_auc\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss, e.train_auc, e.valid_auc
            ));
        }
        out
    }
}

/// Evaluation output: pooled AUC plus each point's (probability, label).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub auc: f64,
    pub points: Vec<(f64, u8)>,
}

/// min(cap, longest sequence): chunk window used when the config leaves
/// `t_max` unset.
pub fn default_window(seqs: &[StudentSequence]) -> usize {
    let longest = seqs.iter().map(|s| s.interactions.len()).max().unwrap_or(0);
    longest.min(DEFAULT_WINDOW_CAP).max(1)
}

fn pad_all(
    seqs: &[StudentSequence],
    t_max: usize,
    vocab: usize,
) -> Result<Vec<PaddedRow>, TrainError> {
    let mut rows = Vec::new();
    for seq in seqs {
        rows.extend(pad_sequence(seq, t_max, vocab)?);
    }
    Ok(rows)
}

fn pooled_eval(
    model: &ModelConfig,
    registry: &crate::optim::ParamRegistry,
    rows: &[PaddedRow],
) -> Result<Vec<(f64, u8)>, TrainError> {
    let mut points = Vec::new();
    for row in rows {
        points.extend(model.sequence_eval(registry, row)?.points);
    }
    Ok(points)
}

/// Trains one model, returning the best-validation-AUC checkpoint and the
/// full per-epoch record.
///
/// Each epoch shuffles the padded rows with the run's seeded generator,
/// walks them in batches (gradient of the summed batch loss, clipped to a
/// global norm of 50, then one momentum step at the scheduled rate), and
/// scores the validation split. The best epoch is the first one reaching
/// the maximal validation AUC; training stops once `patience` epochs pass
/// without strict improvement.
pub fn train(
    config: &TrainConfig,
    vocab: &Vocabulary,
    train_set: &[StudentSequence],
    valid_set: &[StudentSequence],
) -> Result<(Checkpoint, RunReport), TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if valid_set.is_empty() {
        return Err(TrainError::EmptyDataset("validation"));
    }
    if vocab.len() != config.model.q() {
        return Err(TrainError::BadConfig(format!(
            "vocabulary of {} tags does not match the model's {} exercises",
            vocab.len(),
            config.model.q()
        )));
    }

    let t_max = config.t_max.unwrap_or_else(|| default_window(train_set));
    let train_rows = pad_all(train_set, t_max, vocab.len())?;
    let valid_rows = pad_all(valid_set, t_max, vocab.len())?;

    let mut init_rng = ChaCha20Rng::seed_from_u64(config.seed);
    init_rng.set_stream(0);
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let mut registry = config.model.init_params(config.sigma, &mut init_rng)?;
    let mut opt_state = OptimizerState::new(&registry, MOMENTUM)?;
    let param_count = registry.total_values();

    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    let mut epochs = Vec::new();
    let mut epoch_seconds = Vec::new();
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = lr_schedule(config.initial_lr, epoch);
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut train_points = Vec::new();
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            registry.zero_grads();
            for &i in chunk {
                let eval = config.model.sequence_grad(&mut registry, &train_rows[i])?;
                if !eval.loss.is_finite() {
                    return Err(TrainError::Diverged { epoch, batch });
                }
                loss_sum += eval.loss;
                train_points.extend(eval.points);
            }
            clip_global_norm(&mut registry, CLIP_THRESHOLD)?;
            sgd_momentum_step(&mut registry, &mut opt_state, lr)?;
        }
        if train_points.is_empty() {
            return Err(TrainError::NoPredictionPoints("training"));
        }
        let train_loss = loss_sum / train_points.len() as f64;
        let train_auc = auc(&ScoredLabels::from_points(&train_points)?)?;

        let valid_points = pooled_eval(&config.model, &registry, &valid_rows)?;
        if valid_points.is_empty() {
            return Err(TrainError::NoPredictionPoints("validation"));
        }
        let valid_auc = auc(&ScoredLabels::from_points(&valid_points)?)?;

        epochs.push(EpochStats {
            epoch,
            train_loss,
            train_auc,
            valid_auc,
        });
        epoch_seconds.push(started.elapsed().as_secs_f64());

        let improved = best.as_ref().map_or(true, |(_, b, _)| valid_auc > *b);
        if improved {
            let snapshot = Checkpoint::from_registry(
                config.model.clone(),
                vocab.originals().to_vec(),
                &registry,
            )?;
            best = Some((epoch, valid_auc, snapshot));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let (best_epoch, best_valid_auc, checkpoint) =
        best.expect("epoch cap is at least 1, so one epoch always runs");
    let report = RunReport {
        epochs,
        best_epoch,
        best_valid_auc,
        test_auc: None,
        param_count,
        epoch_seconds,
    };
    Ok((checkpoint, report))
}

/// Scores a held-out set with a trained checkpoint. Sequences must already
/// use the checkpoint's dense exercise ids; out-of-vocabulary ids are
/// rejected by the encoder.
pub fn evaluate(
    checkpoint: &Checkpoint,
    test_set: &[StudentSequence],
    t_max: Option<usize>,
) -> Result<EvalReport, TrainError> {
    if test_set.is_empty() {
        return Err(TrainError::EmptyDataset("test"));
    }
    let registry = checkpoint.registry()?;
    let window = t_max.unwrap_or_else(|| default_window(test_set));
    let rows = pad_all(test_set, window, checkpoint.model.q())?;
    let points = pooled_eval(&checkpoint.model, &registry, &rows)?;
    if points.is_empty() {
        return Err(TrainError::NoPredictionPoints("test"));
    }
    let auc = auc(&ScoredLabels::from_points(&points)?)?;
    Ok(EvalReport { auc, points })
}

/// One seed's outcome inside `repeated_runs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub best_epoch: usize,
    pub valid_auc: f64,
    pub test_auc: f64,
}

/// Aggregate over independent seeded runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedRunsReport {
    pub runs: Vec<SeedRun>,
    pub mean_test_auc: f64,
    pub std_test_auc: f64,
}

/// Runs the full train+evaluate cycle once per seed and aggregates the test
/// AUCs with mean and sample standard deviation. A diverging seed aborts
/// the whole protocol with that seed named.
pub fn repeated_runs(
    config: &TrainConfig,
    vocab: &Vocabulary,
    train_set: &[StudentSequence],
    valid_set: &[StudentSequence],
    test_set: &[StudentSequence],
    seeds: &[u64],
) -> Result<RepeatedRunsReport, TrainError> {
    if seeds.len() < 2 {
        return Err(TrainError::TooFewSeeds(seeds.len()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut cfg = config.clone();
        cfg.seed = seed;
        let cycle = (|| -> Result<SeedRun, TrainError> {
            let (ck, report) = train(&cfg, vocab, train_set, valid_set)?;
            let eval = evaluate(&ck, test_set, cfg.t_max)?;
            Ok(SeedRun {
                seed,
                best_epoch: report.best_epoch,
                valid_auc: report.best_valid_auc,
                test_auc: eval.auc,
            })
        })();
        match cycle {
            Ok(run) => runs.push(run),
            Err(source) => {
                return Err(TrainError::SeedFailed {
                    seed,
                    source: Box::new(source),
                })
            }
        }
    }
    let aucs: Vec<f64> = runs.iter().map(|r| r.test_auc).collect();
    let (mean_test_auc, std_test_auc) = mean_std(&aucs);
    Ok(RepeatedRunsReport {
        runs,
        mean_test_auc,
        std_test_auc,
    })
}
