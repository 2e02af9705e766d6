use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use granlab::checkpoint::load_models;
use granlab::gran::{Discriminator, GranConfig, Generator};
use granlab::kv::KvMap;

fn granlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_granlab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GRANLAB_PRECISION")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn kv(path: &Path) -> KvMap {
    KvMap::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &str = "data_count=400\ntest_count=100\nbatch_size=20\nsample_count=9\n";

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.txt");
    std::fs::write(&p, SMALL).unwrap();
    p
}

#[test]
fn zero_iterations_checkpoint_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = ok(&granlab(
        &["train", "--config", cfg.to_str().unwrap(), "--dataset", "ring", "--steps", "2", "--iters", "0", "--seed", "4", "--out", "run"],
        dir.path(),
    ));
    assert!(out.contains("iterations=0"));
    let run = dir.path().join("run");
    assert_eq!(
        std::fs::read_to_string(run.join("trace.csv")).unwrap(),
        "iter,d_loss,g_loss,V,acc_real,acc_fake\n"
    );
    let saved = load_models::<f32>(&run.join("checkpoint.grn")).unwrap();
    let mut config = GranConfig::ring(2);
    config.steps = 2;
    assert_eq!(saved.gen, Generator::<f32>::init(config.clone(), 5).unwrap());
    assert_eq!(saved.disc, Discriminator::<f32>::init(config, 6).unwrap());
    for f in ["config.txt", "samples.csv", "steps.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    // Nine samples, two steps each.
    let steps = std::fs::read_to_string(run.join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 1 + 9 * 2);
}

#[test]
fn fixed_seed_and_echoed_config_reproduce_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let args = |out: &'static str| {
        vec!["train", "--config", cfg.to_str().unwrap(), "--dataset", "shapes", "--steps", "2", "--iters", "6", "--seed", "9", "--out", out]
    };
    ok(&granlab(&args("a"), dir.path()));
    ok(&granlab(&args("b"), dir.path()));
    ok(&granlab(&["train", "--config", "a/config.txt", "--out", "c"], dir.path()));
    for f in ["checkpoint.grn", "trace.csv", "samples.pgm", "grid.pgm", "steps.pgm", "deltas.pgm", "config.txt"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
        assert_eq!(a, std::fs::read(dir.path().join("c").join(f)).unwrap(), "{f}");
    }
    let echoed = kv(&dir.path().join("a/config.txt"));
    assert_eq!(echoed.get("iterations"), Some("6"));
    assert_eq!(echoed.get("seed"), Some("9"));
    assert_eq!(echoed.get("batch_size"), Some("20"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.txt"), "steps=2\nlearning_rate=0.1\n").unwrap();
    let out = granlab(&["train", "--config", "bad.txt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rate") && err.contains("valid keys") && err.contains("lr_g"), "{err}");
    assert!(!dir.path().join("granlab-out").exists());

    let out = granlab(&["train", "--policy", "sometimes"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mnist_run_writes_28_by_28_tiles() {
    let dir = tempfile::tempdir().unwrap();
    let n = 6u32;
    let mut idx = Vec::new();
    for v in [0x0803u32, n, 28, 28] {
        idx.extend_from_slice(&v.to_be_bytes());
    }
    idx.extend((0..n as usize * 784).map(|i| (i % 251) as u8));
    std::fs::write(dir.path().join("images.idx"), idx).unwrap();
    std::fs::write(dir.path().join("m.txt"), "test_count=2\nbatch_size=4\nsample_count=4\n").unwrap();
    ok(&granlab(
        &["train", "--config", "m.txt", "--dataset", "mnist:images.idx", "--steps", "1", "--iters", "1", "--out", "m"],
        dir.path(),
    ));
    let grid = std::fs::read(dir.path().join("m/grid.pgm")).unwrap();
    assert!(grid.starts_with(b"P5\n56 56\n255\n"));
    let stack = granlab::data::read_pnm_stack::<f32>(&dir.path().join("m/samples.pgm")).unwrap();
    assert_eq!(stack.shape(), &[4, 1, 28, 28]);
    // One row per sample, one column per step.
    let steps = std::fs::read(dir.path().join("m/steps.pgm")).unwrap();
    assert!(steps.starts_with(b"P5\n28 112\n255\n"));
}

#[test]
fn battle_verdicts_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for (out, steps, seed) in [("g1", "1", "1"), ("g3", "3", "2")] {
        ok(&granlab(
            &["train", "--config", cfg.to_str().unwrap(), "--steps", steps, "--iters", "3", "--seed", seed, "--out", out],
            dir.path(),
        ));
    }
    let stdout = ok(&granlab(&["battle", "g1/checkpoint.grn", "g1/checkpoint.grn", "--out", "self"], dir.path()));
    let report = KvMap::parse(&stdout).unwrap();
    assert_eq!(report.get("winner"), Some("Tie"));
    assert_eq!(report.get("r_test"), Some("1"));
    assert_eq!(kv(&dir.path().join("self/battle.txt")), report);
    assert_eq!(report.get("n_samples"), Some("100"));

    let stdout = ok(&granlab(
        &["battle", "g1/checkpoint.grn", "g3/checkpoint.grn", "--delta", "0", "--n", "50", "--out", "d0"],
        dir.path(),
    ));
    let report = KvMap::parse(&stdout).unwrap();
    assert_eq!(report.get("model1"), Some("GRAN1"));
    assert_eq!(report.get("model2"), Some("GRAN3"));
    assert_eq!(report.get("n_samples"), Some("50"));
    if report.get("r_test") != Some("1") {
        assert_eq!(report.get("winner"), Some("Tie"));
    }

    ok(&granlab(
        &["train", "--config", cfg.to_str().unwrap(), "--dataset", "ring", "--iters", "0", "--out", "ring"],
        dir.path(),
    ));
    let out = granlab(&["battle", "g1/checkpoint.grn", "ring/checkpoint.grn", "--out", "bad"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("canvas"));
}

#[test]
fn fixture_pair_reproduces_golden_report() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let stdout = ok(&granlab(
        &[
            "battle",
            f.join("gran1.grn").to_str().unwrap(),
            f.join("gran3.grn").to_str().unwrap(),
            "--out",
            "golden",
        ],
        dir.path(),
    ));
    assert_eq!(stdout, std::fs::read_to_string(f.join("battle_golden.txt")).unwrap());
}

#[test]
fn cross_eval_reads_images_and_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    ok(&granlab(&["train", "--config", cfg.to_str().unwrap(), "--iters", "2", "--out", "img"], dir.path()));
    ok(&granlab(&["sample", "img/checkpoint.grn", "--count", "12", "--seed", "5", "--out", "s"], dir.path()));
    let out = ok(&granlab(&["cross-eval", "img/checkpoint.grn", "s/samples.pgm", "--out", "ce"], dir.path()));
    let rate: f64 = out.trim().strip_prefix("cross_model_error=").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    assert_eq!(kv(&dir.path().join("ce/cross_eval.txt")).get("count"), Some("12"));

    ok(&granlab(
        &["train", "--config", cfg.to_str().unwrap(), "--dataset", "ring", "--iters", "2", "--out", "ring"],
        dir.path(),
    ));
    let out = ok(&granlab(&["cross-eval", "ring/checkpoint.grn", "ring/samples.csv", "--out", "ce2"], dir.path()));
    assert!(out.starts_with("cross_model_error="));

    std::fs::write(dir.path().join("junk.pgm"), b"P5\n8 8\n255\n\x00").unwrap();
    let out = granlab(&["cross-eval", "img/checkpoint.grn", "junk.pgm"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse error"));
}

#[test]
fn sampling_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    ok(&granlab(&["train", "--config", cfg.to_str().unwrap(), "--iters", "2", "--out", "m"], dir.path()));
    for out in ["s1", "s2"] {
        ok(&granlab(&["sample", "m/checkpoint.grn", "--seed", "3", "--out", out], dir.path()));
    }
    let a = std::fs::read(dir.path().join("s1/samples.pgm")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("s2/samples.pgm")).unwrap());
    // sample_count=9 was stored in the checkpoint.
    let stack = granlab::data::parse_pnm_stack::<f32>(&a).unwrap();
    assert_eq!(stack.rows(), 9);
}

#[test]
fn verify_suites() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&granlab(&["verify", "convoracle"], dir.path()));
    assert!(out.contains("PASS conv1d_transpose_oracle") && out.contains("0 failed"), "{out}");
    let out = ok(&granlab(&["verify", "gam"], dir.path()));
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS table_")).count(), 8, "{out}");

    let out = granlab(&["verify", "everything"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_granlab"))
        .args(["verify", "gam"])
        .env("GRANLAB_PRECISION", "quad")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
