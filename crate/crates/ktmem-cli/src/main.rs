//! Command-line front end for the knowledge-tracing models: dataset
//! synthesis, training, evaluation, concept discovery, knowledge-state
//! traces, and gradient verification.
//!
//! Every option can also come from a `key = value` config file (`--config`);
//! command-line flags win over file values. Unknown flags and unknown
//! config keys are rejected. All outputs are deterministic under fixed
//! options and seed.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ktmem::analysis::{
    clusters_csv, discover_concepts, trace_csv, trace_knowledge_state, weight_matrix_csv,
};
use ktmem::checkpoint::Checkpoint;
use ktmem::dkt::DktConfig;
use ktmem::dkvmn::DkvmnConfig;
use ktmem::encoding::{
    parse_triplet_format, parse_triplet_with_vocab, serialize_triplet_format, split_train_valid,
    StudentSequence, Vocabulary,
};
use ktmem::mann::MannConfig;
use ktmem::model::{ModelConfig, ModelKind};
use ktmem::synthgen::{generate, GroundTruth, SynthConfig};
use ktmem::trainer::{evaluate, repeated_runs, train, RunReport, TrainConfig};
use ktmem::verify::{model_gradcheck, GRADCHECK_TOLERANCE};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Parser)]
#[command(
    name = "ktmem",
    version,
    about = "Memory-network knowledge tracing: synthesize data, train, evaluate, analyze"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic student dataset with ground-truth concepts
    Synth(SynthArgs),
    /// Train a model and keep the best-validation-AUC checkpoint
    Train(TrainArgs),
    /// Score a held-out dataset with a trained checkpoint
    Eval(EvalArgs),
    /// Assign exercises to concepts from a trained key-value checkpoint
    Discover(DiscoverArgs),
    /// Export one student's knowledge-state trajectory
    Trace(TraceArgs),
    /// Check model gradients against central differences
    Gradcheck(GradcheckArgs),
}

/// `key = value` file with `#` comments. Keys mirror the long flag names
/// with underscores; unknown keys are an error.
struct FileConfig {
    map: BTreeMap<String, String>,
}

impl FileConfig {
    fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        let mut map = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    anyhow!("config line {}: expected `key = value`, got {raw:?}", i + 1)
                })?;
                let key = key.trim().to_string();
                if !allowed.contains(&key.as_str()) {
                    bail!(
                        "config line {}: unknown key {key:?} (allowed: {})",
                        i + 1,
                        allowed.join(", ")
                    );
                }
                map.insert(key, value.trim().to_string());
            }
        }
        Ok(FileConfig { map })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("config key {key} = {raw:?}: {e}")),
        }
    }
}

/// Flag beats config file; both absent yields None.
fn pick<T: FromStr>(flag: Option<T>, cfg: &FileConfig, key: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => cfg.get(key),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

// ---------------------------------------------------------------------------
// synth

#[derive(Args)]
struct SynthArgs {
    /// Key-value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train_students: Option<usize>,
    #[arg(long)]
    test_students: Option<usize>,
    #[arg(long)]
    exercises: Option<usize>,
    #[arg(long)]
    concepts: Option<usize>,
    /// Guess floor of the response model
    #[arg(long)]
    guess: Option<f64>,
    /// Per-answer ability increment
    #[arg(long)]
    increment: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for train.txt, test.txt, truth.txt
    #[arg(long)]
    out: Option<PathBuf>,
}

const SYNTH_KEYS: &[&str] = &[
    "train_students",
    "test_students",
    "exercises",
    "concepts",
    "guess",
    "increment",
    "seed",
    "out",
];

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref(), SYNTH_KEYS)?;
    let defaults = SynthConfig::default();
    let synth = SynthConfig {
        train_students: pick(args.train_students, &cfg, "train_students")?
            .unwrap_or(defaults.train_students),
        test_students: pick(args.test_students, &cfg, "test_students")?
            .unwrap_or(defaults.test_students),
        exercises: pick(args.exercises, &cfg, "exercises")?.unwrap_or(defaults.exercises),
        concepts: pick(args.concepts, &cfg, "concepts")?.unwrap_or(defaults.concepts),
        guess: pick(args.guess, &cfg, "guess")?.unwrap_or(defaults.guess),
        learning_increment: pick(args.increment, &cfg, "increment")?
            .unwrap_or(defaults.learning_increment),
        seed: pick(args.seed, &cfg, "seed")?.unwrap_or(defaults.seed),
    };
    let out = pick(args.out, &cfg, "out")?.unwrap_or_else(|| PathBuf::from("."));

    let (train_set, test_set, truth) = generate(&synth)?;
    ensure_dir(&out)?;
    write_file(&out.join("train.txt"), &serialize_triplet_format(&train_set))?;
    write_file(&out.join("test.txt"), &serialize_triplet_format(&test_set))?;
    write_file(&out.join("truth.txt"), &truth.to_text())?;

    let students = train_set.len() + test_set.len();
    let records: usize = train_set
        .iter()
        .chain(&test_set)
        .map(|s| s.interactions.len())
        .sum();
    println!(
        "students: {students} ({} train + {} test)",
        train_set.len(),
        test_set.len()
    );
    println!("exercise tags: {}", synth.exercises);
    println!("records: {records}");
    println!(
        "wrote {}, {}, {}",
        out.join("train.txt").display(),
        out.join("test.txt").display(),
        out.join("truth.txt").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

#[derive(Args)]
struct TrainArgs {
    /// Key-value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model kind: dkvmn, mann, or dkt
    #[arg(long)]
    model: Option<ModelKind>,
    /// Training data in triplet format
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Held-out test data in triplet format
    #[arg(long)]
    test: Option<PathBuf>,
    /// State width (key/value width, single-memory width, or LSTM hidden size)
    #[arg(long)]
    d: Option<usize>,
    /// Memory slots; ignored by the LSTM baseline
    #[arg(long)]
    n: Option<usize>,
    /// Initial learning rate
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Init standard deviation
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run the full protocol over this many consecutive seeds and report
    /// mean±std test AUC; requires --test
    #[arg(long)]
    seeds: Option<usize>,
    /// Fraction of training students held out for validation
    #[arg(long)]
    valid_fraction: Option<f64>,
    /// Chunk window; defaults to min(200, longest sequence)
    #[arg(long)]
    t_max: Option<usize>,
    /// Output directory for checkpoint.json and curve.csv
    #[arg(long)]
    out: Option<PathBuf>,
}

const TRAIN_KEYS: &[&str] = &[
    "model",
    "dataset",
    "test",
    "d",
    "n",
    "lr",
    "batch",
    "epochs",
    "patience",
    "sigma",
    "seed",
    "seeds",
    "valid_fraction",
    "t_max",
    "out",
];

fn build_model(kind: ModelKind, q: usize, d: usize, n: usize) -> ModelConfig {
    match kind {
        ModelKind::Dkvmn => ModelConfig::Dkvmn(DkvmnConfig::square(q, n, d)),
        ModelKind::Mann => ModelConfig::Mann(MannConfig { q, n, m: d }),
        ModelKind::Dkt => ModelConfig::Dkt(DktConfig { q, d_h: d }),
    }
}

fn print_report(report: &RunReport) {
    for e in &report.epochs {
        println!(
            "epoch {}: train loss {:.4}  train auc {:.4}  valid auc {:.4}",
            e.epoch, e.train_loss, e.train_auc, e.valid_auc
        );
    }
    println!(
        "best epoch {} (valid auc {:.4}), {} parameters",
        report.best_epoch, report.best_valid_auc, report.param_count
    );
    if let Some(auc) = report.test_auc {
        println!("test auc: {auc:.4}");
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref(), TRAIN_KEYS)?;
    let kind: ModelKind = pick(args.model, &cfg, "model")?
        .context("--model is required (dkvmn, mann, or dkt)")?;
    let dataset: PathBuf =
        pick(args.dataset, &cfg, "dataset")?.context("--dataset is required")?;
    let test_path: Option<PathBuf> = pick(args.test, &cfg, "test")?;
    let d = pick(args.d, &cfg, "d")?.unwrap_or(10);
    let n = pick(args.n, &cfg, "n")?.unwrap_or(5);
    let seed = pick(args.seed, &cfg, "seed")?.unwrap_or(0);
    let seeds: Option<usize> = pick(args.seeds, &cfg, "seeds")?;
    let valid_fraction = pick(args.valid_fraction, &cfg, "valid_fraction")?.unwrap_or(0.2);
    let out = pick(args.out, &cfg, "out")?.unwrap_or_else(|| PathBuf::from("."));

    let (seqs, vocab) = parse_triplet_format(&read_file(&dataset)?)?;
    let model = build_model(kind, vocab.len(), d, n);
    let mut train_cfg = TrainConfig::defaults(model);
    train_cfg.seed = seed;
    if let Some(lr) = pick(args.lr, &cfg, "lr")? {
        train_cfg.initial_lr = lr;
    }
    if let Some(batch) = pick(args.batch, &cfg, "batch")? {
        train_cfg.batch_size = batch;
    }
    if let Some(epochs) = pick(args.epochs, &cfg, "epochs")? {
        train_cfg.epochs = epochs;
    }
    if let Some(patience) = pick(args.patience, &cfg, "patience")? {
        train_cfg.patience = patience;
    }
    if let Some(sigma) = pick(args.sigma, &cfg, "sigma")? {
        train_cfg.sigma = sigma;
    }
    train_cfg.t_max = pick(args.t_max, &cfg, "t_max")?;

    let (train_set, valid_set) = split_train_valid(seqs, valid_fraction, seed)?;
    let test_set: Option<Vec<StudentSequence>> = match &test_path {
        Some(p) => Some(parse_triplet_with_vocab(&read_file(p)?, &vocab)?),
        None => None,
    };

    if let Some(k) = seeds {
        let test_set = test_set
            .as_deref()
            .context("--seeds needs --test to score each run")?;
        let seed_list: Vec<u64> = (0..k as u64).map(|i| seed + i).collect();
        let report = repeated_runs(
            &train_cfg, &vocab, &train_set, &valid_set, test_set, &seed_list,
        )?;
        let mut csv = String::from("seed,best_epoch,valid_auc,test_auc\n");
        for run in &report.runs {
            println!(
                "seed {}: best epoch {}, valid auc {:.4}, test auc {:.4}",
                run.seed, run.best_epoch, run.valid_auc, run.test_auc
            );
            csv.push_str(&format!(
                "{},{},{},{}\n",
                run.seed, run.best_epoch, run.valid_auc, run.test_auc
            ));
        }
        println!(
            "test auc over {k} seeds: {:.1}±{:.1}",
            report.mean_test_auc * 100.0,
            report.std_test_auc * 100.0
        );
        ensure_dir(&out)?;
        write_file(&out.join("seeds.csv"), &csv)?;
        return Ok(());
    }

    let (checkpoint, mut report) = train(&train_cfg, &vocab, &train_set, &valid_set)?;
    if let Some(test_set) = &test_set {
        report.test_auc = Some(evaluate(&checkpoint, test_set, train_cfg.t_max)?.auc);
    }
    ensure_dir(&out)?;
    checkpoint
        .save(&out.join("checkpoint.json"))
        .context("writing checkpoint")?;
    write_file(&out.join("curve.csv"), &report.curve_csv())?;
    print_report(&report);
    println!(
        "wrote {} and {}",
        out.join("checkpoint.json").display(),
        out.join("curve.csv").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Args)]
struct EvalArgs {
    /// Key-value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Data to score, triplet format, same vocabulary as the checkpoint
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Chunk window; defaults to min(200, longest sequence)
    #[arg(long)]
    t_max: Option<usize>,
}

const EVAL_KEYS: &[&str] = &["checkpoint", "dataset", "t_max"];

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref(), EVAL_KEYS)?;
    let ck_path: PathBuf =
        pick(args.checkpoint, &cfg, "checkpoint")?.context("--checkpoint is required")?;
    let dataset: PathBuf =
        pick(args.dataset, &cfg, "dataset")?.context("--dataset is required")?;
    let t_max: Option<usize> = pick(args.t_max, &cfg, "t_max")?;

    let checkpoint = Checkpoint::load(&ck_path)
        .with_context(|| format!("loading checkpoint {}", ck_path.display()))?;
    let vocab = Vocabulary::from_tags(checkpoint.vocabulary.iter().copied());
    let seqs = parse_triplet_with_vocab(&read_file(&dataset)?, &vocab)?;
    let eval = evaluate(&checkpoint, &seqs, t_max)?;
    println!("test auc: {:.4}", eval.auc);
    println!("points: {}", eval.points.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// discover

#[derive(Args)]
struct DiscoverArgs {
    /// Key-value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Ground-truth concept file (exercise,concept,difficulty rows)
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Output directory for weights.csv and clusters.csv
    #[arg(long)]
    out: Option<PathBuf>,
}

const DISCOVER_KEYS: &[&str] = &["checkpoint", "ground_truth", "out"];

/// Ground-truth labels reordered to the checkpoint's dense exercise ids.
fn dense_truth_labels(truth: &GroundTruth, checkpoint: &Checkpoint) -> Result<Vec<usize>> {
    let mut labels = Vec::with_capacity(checkpoint.vocabulary.len());
    for &tag in &checkpoint.vocabulary {
        let e = usize::try_from(tag).ok().filter(|&e| e >= 1);
        let concept = e.and_then(|e| truth.concept_of(e)).ok_or_else(|| {
            anyhow!("ground truth has no entry for exercise tag {tag}")
        })?;
        labels.push(concept);
    }
    Ok(labels)
}

fn cmd_discover(args: DiscoverArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref(), DISCOVER_KEYS)?;
    let ck_path: PathBuf =
        pick(args.checkpoint, &cfg, "checkpoint")?.context("--checkpoint is required")?;
    let truth_path: Option<PathBuf> = pick(args.ground_truth, &cfg, "ground_truth")?;
    let out = pick(args.out, &cfg, "out")?.unwrap_or_else(|| PathBuf::from("."));

    let checkpoint = Checkpoint::load(&ck_path)?;
    let truth = match &truth_path {
        Some(p) => Some(GroundTruth::parse_text(&read_file(p)?)?),
        None => None,
    };
    let labels = match &truth {
        Some(t) => Some(dense_truth_labels(t, &checkpoint)?),
        None => None,
    };
    let report = discover_concepts(&checkpoint, labels.as_deref())?;

    ensure_dir(&out)?;
    write_file(&out.join("weights.csv"), &weight_matrix_csv(&report))?;
    write_file(&out.join("clusters.csv"), &clusters_csv(&report))?;

    println!(
        "{} exercises assigned to {} nonempty concepts",
        report.clusters.len(),
        report.nonempty_clusters
    );
    if let Some(ami) = report.ami {
        println!("ami vs ground truth: {ami:.4}");
    }
    println!(
        "wrote {} and {}",
        out.join("weights.csv").display(),
        out.join("clusters.csv").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// trace

#[derive(Args)]
struct TraceArgs {
    /// Key-value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset holding the student, triplet format
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Zero-based student index within the dataset
    #[arg(long)]
    student: Option<usize>,
    /// Output directory for trace.csv
    #[arg(long)]
    out: Option<PathBuf>,
}

const TRACE_KEYS: &[&str] = &["checkpoint", "dataset", "student", "out"];

fn cmd_trace(args: TraceArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref(), TRACE_KEYS)?;
    let ck_path: PathBuf =
        pick(args.checkpoint, &cfg, "checkpoint")?.context("--checkpoint is required")?;
    let dataset: PathBuf =
        pick(args.dataset, &cfg, "dataset")?.context("--dataset is required")?;
    let student = pick(args.student, &cfg, "student")?.unwrap_or(0);
    let out = pick(args.out, &cfg, "out")?.unwrap_or_else(|| PathBuf::from("."));

    let checkpoint = Checkpoint::load(&ck_path)?;
    let vocab = Vocabulary::from_tags(checkpoint.vocabulary.iter().copied());
    let seqs = parse_triplet_with_vocab(&read_file(&dataset)?, &vocab)?;
    let seq = seqs.get(student).ok_or_else(|| {
        anyhow!(
            "student index {student} out of range: dataset has {} students",
            seqs.len()
        )
    })?;

    let trace = trace_knowledge_state(&checkpoint, seq)?;
    ensure_dir(&out)?;
    write_file(&out.join("trace.csv"), &trace_csv(&trace))?;
    println!(
        "student {}: {} interactions, {} trace rows",
        trace.student,
        trace.exercises.len(),
        trace.states.len()
    );
    println!("wrote {}", out.join("trace.csv").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck

#[derive(Args)]
struct GradcheckArgs {
    /// Model kind to check; all three when omitted
    #[arg(long)]
    model: Option<ModelKind>,
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let kinds = match args.model {
        Some(kind) => vec![kind],
        None => vec![ModelKind::Dkvmn, ModelKind::Mann, ModelKind::Dkt],
    };
    let mut all_passed = true;
    for kind in kinds {
        let outcome = model_gradcheck(kind)?;
        println!(
            "{kind}: {} coordinates, max relative error {:.3e} -> {}",
            outcome.coords_checked,
            outcome.max_rel_err,
            if outcome.passed { "pass" } else { "FAIL" }
        );
        all_passed &= outcome.passed;
    }
    if !all_passed {
        bail!("gradient check exceeded tolerance {GRADCHECK_TOLERANCE:e}");
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Discover(args) => cmd_discover(args),
        Command::Trace(args) => cmd_trace(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}
