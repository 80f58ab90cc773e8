use std::fs;
use std::path::{Path, PathBuf};

use radfiner::cli::run_from;
use radfiner::network::NetworkConfig;
use radfiner::synth::GeneratorConfig;

fn run(args: &[&str]) -> i32 {
    run_from(std::iter::once("radfiner").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_match_builtin_defaults() {
    assert_eq!(GeneratorConfig::load(&configs().join("default.cfg")).unwrap(), GeneratorConfig::default());
    assert_eq!(NetworkConfig::load(&configs().join("net_paper.cfg")).unwrap(), NetworkConfig::paper());
    assert_eq!(NetworkConfig::load(&configs().join("net_desk.cfg")).unwrap(), NetworkConfig::desk());
    assert_eq!(NetworkConfig::load(&configs().join("net_toy.cfg")).unwrap(), NetworkConfig::toy());
}

#[test]
fn generate_zero_count_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    assert_eq!(run(&["generate", "--count", "0", "--out", s(&out)]), 0);
    for f in ["scans.txt", "preds.txt"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert!(text.lines().all(|l| l.starts_with('#')), "{f}: {text}");
    }
    assert!(out.join("manifest.json").exists());
}

#[test]
fn generate_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = configs().join("default.cfg");
    for out in [&a, &b] {
        assert_eq!(run(&["generate", "--config", s(&cfg), "--count", "5", "--seed", "9", "--out", s(out)]), 0);
    }
    for f in ["scans.txt", "preds.txt", "generator.cfg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["seed"], 9);
    assert_eq!(manifest["config"]["eps_merge"], "0.2");
}

#[test]
fn bad_generator_setting_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["generate", "--count", "1", "--set", "eps_miss=2", "--out", s(dir.path())]), 1);
}

#[test]
fn perfect_surrogate_scores_one_and_refine_leaves_scans_alone() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut args = vec!["generate", "--count", "6", "--seed", "2", "--out", s(&data)];
    for k in ["eps_boundary=0", "eps_clutter=0", "eps_merge=0", "eps_miss=0"] {
        args.extend(["--set", k]);
    }
    assert_eq!(run(&args), 0);
    let before = fs::read(data.join("scans.txt")).unwrap();
    let out = dir.path().join("eval");
    assert_eq!(run(&["eval", "--data", s(&data), "--refine", "--out", s(&out)]), 0);
    assert_eq!(fs::read(data.join("scans.txt")).unwrap(), before);

    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut present = 0;
    for row in csv.lines().skip(1).take(6) {
        let f: Vec<&str> = row.split(',').collect();
        let count: u64 = f[3..6].iter().map(|v| v.parse::<u64>().unwrap()).sum();
        if count > 0 {
            present += 1;
            assert_eq!(f[1], "1.000000", "{row}");
        }
    }
    assert!(present >= 2);
    assert!(fs::read_to_string(out.join("panoptic.txt")).unwrap().lines().count() > 6);
}

#[test]
fn train_one_epoch_then_eval_and_bench_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = (dir.path().join("data"), dir.path().join("model"));
    assert_eq!(run(&["generate", "--count", "10", "--seed", "1", "--out", s(&data)]), 0);
    let train = ["train", "--data", s(&data), "--out", s(&model), "--preset", "toy", "--epochs", "1", "--batch-size", "5"];
    assert_eq!(run(&train), 0);
    let history = fs::read_to_string(model.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2, "{history}");
    assert!(model.join("ckpt_epoch01").exists());

    let ckpt = model.join("ckpt_epoch01");
    let eval = dir.path().join("eval");
    let args = ["eval", "--data", s(&data), "--source", "checkpoint", "--checkpoint", s(&ckpt), "--refine", "--out", s(&eval)];
    assert_eq!(run(&args), 0);
    assert!(eval.join("metrics.txt").exists());

    let bench = dir.path().join("bench");
    let args = ["bench", "--data", s(&data), "--checkpoint", s(&ckpt), "--repetitions", "1", "--warmup", "2", "--out", s(&bench)];
    assert_eq!(run(&args), 0);
    let report = fs::read_to_string(bench.join("bench.txt")).unwrap();
    assert!(report.starts_with("latency over 10 samples"), "{report}");
}

#[test]
fn training_on_missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    assert_eq!(run(&["train", "--data", s(&missing), "--out", s(dir.path())]), 2);
}

#[test]
fn checkpoint_source_needs_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(run(&["generate", "--count", "1", "--out", s(&data)]), 0);
    assert_eq!(run(&["eval", "--data", s(&data), "--source", "checkpoint", "--out", s(dir.path())]), 1);
}

#[test]
fn gradcheck_lists_every_tensor_and_fails_on_tight_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc");
    assert_eq!(run(&["gradcheck", "--points", "12", "--out", s(&out)]), 0);
    let report = fs::read_to_string(out.join("gradcheck.txt")).unwrap();
    let (_, store) = radfiner::network::Network::new(&NetworkConfig::toy()).unwrap();
    for p in store.params() {
        assert!(report.contains(&p.name), "{} missing", p.name);
    }
    assert_eq!(run(&["gradcheck", "--points", "12", "--tol", "1e-30"]), 3);
}
