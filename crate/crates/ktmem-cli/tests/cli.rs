//! End-to-end checks of the `ktmem` binary: every subcommand runs against
//! real files in a temp directory, outputs are deterministic, and bad
//! invocations fail loudly.

use std::path::Path;
use std::process::{Command, Output};

fn ktmem(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ktmem"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        stdout(out),
        stderr(out)
    );
}

/// Small synthetic dataset most tests share.
fn synth_tiny(dir: &Path) {
    let out = ktmem(
        &[
            "synth",
            "--train-students",
            "30",
            "--test-students",
            "10",
            "--exercises",
            "8",
            "--concepts",
            "2",
            "--seed",
            "5",
            "--out",
            "data",
        ],
        dir,
    );
    assert_ok(&out);
}

#[test]
fn synth_echoes_counts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let out = ktmem(
        &[
            "synth",
            "--train-students",
            "400",
            "--test-students",
            "400",
            "--seed",
            "1",
            "--out",
            "a",
        ],
        dir,
    );
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("students: 800 (400 train + 400 test)"), "{text}");
    assert!(text.contains("exercise tags: 50"), "{text}");
    assert!(text.contains("records: 40000"), "{text}");

    let out2 = ktmem(
        &[
            "synth",
            "--train-students",
            "400",
            "--test-students",
            "400",
            "--seed",
            "1",
            "--out",
            "b",
        ],
        dir,
    );
    assert_ok(&out2);
    for name in ["train.txt", "test.txt", "truth.txt"] {
        let a = std::fs::read(dir.join("a").join(name)).unwrap();
        let b = std::fs::read(dir.join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn train_eval_discover_trace_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_tiny(dir);

    let out = ktmem(
        &[
            "train",
            "--model",
            "dkvmn",
            "--dataset",
            "data/train.txt",
            "--test",
            "data/test.txt",
            "--d",
            "4",
            "--n",
            "2",
            "--epochs",
            "3",
            "--seed",
            "1",
            "--out",
            "run",
        ],
        dir,
    );
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("epoch 0:"), "{text}");
    assert!(text.contains("best epoch"), "{text}");
    assert!(text.contains("test auc: 0."), "{text}");
    assert!(dir.join("run/checkpoint.json").exists());
    assert!(dir.join("run/curve.csv").exists());
    let curve = std::fs::read_to_string(dir.join("run/curve.csv")).unwrap();
    assert!(curve.starts_with("epoch,train_loss,train_auc,valid_auc\n"));

    // Deterministic rerun: byte-identical artifacts and stdout.
    let out2 = ktmem(
        &[
            "train",
            "--model",
            "dkvmn",
            "--dataset",
            "data/train.txt",
            "--test",
            "data/test.txt",
            "--d",
            "4",
            "--n",
            "2",
            "--epochs",
            "3",
            "--seed",
            "1",
            "--out",
            "run2",
        ],
        dir,
    );
    assert_ok(&out2);
    assert_eq!(
        std::fs::read(dir.join("run/checkpoint.json")).unwrap(),
        std::fs::read(dir.join("run2/checkpoint.json")).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.join("run/curve.csv")).unwrap(),
        std::fs::read(dir.join("run2/curve.csv")).unwrap()
    );

    let eval = ktmem(
        &[
            "eval",
            "--checkpoint",
            "run/checkpoint.json",
            "--dataset",
            "data/test.txt",
        ],
        dir,
    );
    assert_ok(&eval);
    let eval_text = stdout(&eval);
    assert!(eval_text.contains("test auc: 0."), "{eval_text}");
    let eval2 = ktmem(
        &[
            "eval",
            "--checkpoint",
            "run/checkpoint.json",
            "--dataset",
            "data/test.txt",
        ],
        dir,
    );
    assert_eq!(stdout(&eval), stdout(&eval2));

    let disc = ktmem(
        &[
            "discover",
            "--checkpoint",
            "run/checkpoint.json",
            "--ground-truth",
            "data/truth.txt",
            "--out",
            "analysis",
        ],
        dir,
    );
    assert_ok(&disc);
    let disc_text = stdout(&disc);
    assert!(disc_text.contains("8 exercises"), "{disc_text}");
    assert!(disc_text.contains("ami vs ground truth:"), "{disc_text}");
    let weights = std::fs::read_to_string(dir.join("analysis/weights.csv")).unwrap();
    assert!(weights.starts_with("exercise,concept_1,concept_2\n"));
    assert_eq!(weights.lines().count(), 9);
    let clusters = std::fs::read_to_string(dir.join("analysis/clusters.csv")).unwrap();
    assert!(clusters.starts_with("exercise,concept,max_weight\n"));

    let trace = ktmem(
        &[
            "trace",
            "--checkpoint",
            "run/checkpoint.json",
            "--dataset",
            "data/test.txt",
            "--student",
            "2",
            "--out",
            "analysis",
        ],
        dir,
    );
    assert_ok(&trace);
    let trace_text = stdout(&trace);
    // Every synthetic student answers all 8 exercises: 8 interactions,
    // 9 trace rows including the initial state.
    assert!(trace_text.contains("8 interactions, 9 trace rows"), "{trace_text}");
    let csv = std::fs::read_to_string(dir.join("analysis/trace.csv")).unwrap();
    assert!(csv.starts_with("t,exercise,response,concept_1,concept_2\n"));
    assert_eq!(csv.lines().count(), 10);

    // Out-of-range student index fails with the count in the message.
    let bad = ktmem(
        &[
            "trace",
            "--checkpoint",
            "run/checkpoint.json",
            "--dataset",
            "data/test.txt",
            "--student",
            "99",
            "--out",
            "analysis",
        ],
        dir,
    );
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("10 students"), "{}", stderr(&bad));
}

#[test]
fn zero_learning_rate_keeps_parameters_at_their_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_tiny(dir);

    let out = ktmem(
        &[
            "train",
            "--model",
            "dkvmn",
            "--dataset",
            "data/train.txt",
            "--d",
            "4",
            "--n",
            "2",
            "--lr",
            "0",
            "--epochs",
            "2",
            "--sigma",
            "0.05",
            "--seed",
            "3",
            "--out",
            "frozen",
        ],
        dir,
    );
    assert_ok(&out);

    use rand::SeedableRng;
    let ck = ktmem::checkpoint::Checkpoint::load(&dir.join("frozen/checkpoint.json")).unwrap();
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
    rng.set_stream(0);
    let fresh = ck.model.init_params(0.05, &mut rng).unwrap();
    let trained = ck.registry().unwrap();
    for (a, b) in trained.entries().zip(fresh.entries()) {
        assert_eq!(a.name(), b.name());
        for (x, y) in a.value().data().iter().zip(b.value().data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn repeated_seeds_print_the_mean_std_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_tiny(dir);

    let out = ktmem(
        &[
            "train",
            "--model",
            "dkt",
            "--dataset",
            "data/train.txt",
            "--test",
            "data/test.txt",
            "--d",
            "4",
            "--epochs",
            "2",
            "--seed",
            "1",
            "--seeds",
            "2",
            "--out",
            "proto",
        ],
        dir,
    );
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("seed 1:"), "{text}");
    assert!(text.contains("seed 2:"), "{text}");
    let aggregate = text
        .lines()
        .find(|l| l.starts_with("test auc over 2 seeds:"))
        .unwrap_or_else(|| panic!("no aggregate line in {text}"));
    // "NN.N±M.M" in percent.
    let value = aggregate.rsplit(' ').next().unwrap();
    let (mean, std) = value.split_once('±').expect("± separator");
    assert!(mean.parse::<f64>().is_ok(), "{value}");
    assert!(std.parse::<f64>().is_ok(), "{value}");
    let seeds_csv = std::fs::read_to_string(dir.join("proto/seeds.csv")).unwrap();
    assert!(seeds_csv.starts_with("seed,best_epoch,valid_auc,test_auc\n"));
    assert_eq!(seeds_csv.lines().count(), 3);

    // The protocol needs a test set.
    let missing = ktmem(
        &[
            "train",
            "--model",
            "dkt",
            "--dataset",
            "data/train.txt",
            "--d",
            "4",
            "--epochs",
            "1",
            "--seeds",
            "2",
        ],
        dir,
    );
    assert!(!missing.status.success());
    assert!(stderr(&missing).contains("--test"), "{}", stderr(&missing));
}

#[test]
fn config_file_fills_gaps_and_flags_override_it() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_tiny(dir);

    std::fs::write(
        dir.join("run.cfg"),
        "# tiny run\nmodel = dkvmn\ndataset = data/train.txt\nd = 4\nn = 2\nepochs = 1\nseed = 2\nout = cfgrun\n",
    )
    .unwrap();

    let out = ktmem(&["train", "--config", "run.cfg", "--epochs", "2"], dir);
    assert_ok(&out);
    let text = stdout(&out);
    // The flag override wins: two epochs ran, not one.
    assert!(text.contains("epoch 1:"), "{text}");
    assert!(dir.join("cfgrun/checkpoint.json").exists());

    std::fs::write(dir.join("bad.cfg"), "model = dkvmn\nbogus_key = 3\n").unwrap();
    let bad = ktmem(&["train", "--config", "bad.cfg"], dir);
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("bogus_key"), "{}", stderr(&bad));

    std::fs::write(dir.join("mangled.cfg"), "model dkvmn\n").unwrap();
    let mangled = ktmem(&["train", "--config", "mangled.cfg"], dir);
    assert!(!mangled.status.success());
    assert!(stderr(&mangled).contains("key = value"), "{}", stderr(&mangled));
}

#[test]
fn unknown_flags_and_kinds_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let out = ktmem(&["train", "--bogus", "1"], dir);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--bogus"), "{}", stderr(&out));

    let out = ktmem(&["train", "--model", "transformer", "--dataset", "x"], dir);
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("unknown model kind"),
        "{}",
        stderr(&out)
    );

    let out = ktmem(&["eval", "--dataset", "x"], dir);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--checkpoint"), "{}", stderr(&out));
}

#[test]
fn gradcheck_passes_for_each_kind_and_reports_the_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let out = ktmem(&["gradcheck", "--model", "dkt"], dir);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("dkt:"), "{text}");
    assert!(text.contains("pass"), "{text}");

    let all = ktmem(&["gradcheck"], dir);
    assert_ok(&all);
    let text = stdout(&all);
    for kind in ["dkvmn:", "mann:", "dkt:"] {
        assert!(text.contains(kind), "{text}");
    }
}

#[test]
fn eval_reports_exact_chance_for_an_all_zero_model() {
    use ktmem::checkpoint::Checkpoint;
    use ktmem::dkvmn::DkvmnConfig;
    use ktmem::model::ModelConfig;
    use ktmem::optim::ParamRegistry;
    use ktmem::tensor::Tensor;

    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let model = ModelConfig::Dkvmn(DkvmnConfig::square(3, 2, 2));
    let mut registry = ParamRegistry::new();
    for (name, shape) in model.param_shapes() {
        registry.add(name, Tensor::zeros(&shape)).unwrap();
    }
    let ck = Checkpoint::from_registry(model, vec![1, 2, 3], &registry).unwrap();
    ck.save(&dir.join("zero.json")).unwrap();

    std::fs::write(dir.join("data.txt"), "3\n1,2,3\n1,0,1\n2\n2,3\n0,1\n").unwrap();

    let out = ktmem(
        &[
            "eval",
            "--checkpoint",
            "zero.json",
            "--dataset",
            "data.txt",
        ],
        dir,
    );
    assert_ok(&out);
    assert!(stdout(&out).contains("test auc: 0.5000"), "{}", stdout(&out));
}
