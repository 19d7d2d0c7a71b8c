use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use c2c::bagdata::{load_manifest, Bag};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn smoke_data() -> PathBuf {
    repo().join("data/smoke/smoke.c2cbags")
}

fn mnist(name: &str) -> PathBuf {
    repo().join("data/mnist").join(name)
}

fn c2c(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_c2c")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn train_smoke(out: &Path, extra: &[&str]) -> Output {
    let data = smoke_data();
    let mut args = vec![
        "train",
        "--data",
        s(&data),
        "--out",
        s(out),
        "--epochs",
        "2",
        "--k",
        "3",
        "--cap",
        "16",
    ];
    args.extend_from_slice(extra);
    c2c(&args)
}

#[test]
fn missing_mnist_images_is_a_usage_error() {
    let o = c2c(&[
        "gen-data",
        "--mnist-labels",
        s(&mnist("t10k-labels-idx1-ubyte")),
        "--out",
        "/tmp/x",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--mnist-images"));
}

#[test]
fn bad_flag_values_are_usage_errors() {
    assert_eq!(
        c2c(&["ablate", "--axis", "depth", "--values", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(c2c(&["train", "--sampling", "greedy"]).status.code(), Some(2));
    assert_eq!(c2c(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let o = train_smoke(dir.path(), &["--epochs", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "clusters = 3\n").unwrap();
    assert_eq!(c2c(&["train", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn positive_digit_flag_sets_the_bag_rule() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nines.c2cbags");
    let o = c2c(&[
        "gen-data",
        "--mnist-images",
        s(&mnist("t10k-images-idx3-ubyte")),
        "--mnist-labels",
        s(&mnist("t10k-labels-idx1-ubyte")),
        "--train-bags",
        "12",
        "--test-bags",
        "4",
        "--mean-size",
        "10",
        "--positive-digits",
        "9",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ds = load_manifest(&out).unwrap();
    assert_eq!(ds.config.positive_digits, vec![9]);
    for b in ds.train.iter().chain(&ds.test) {
        assert_eq!(
            b.is_positive(),
            b.instances.iter().any(|i| i.digit == 9),
            "bag {}",
            b.bag_id
        );
    }
    assert!(dir.path().join("nines.c2cbags.run.json").exists());
}

#[test]
fn smoke_checkpoint_evaluates_with_full_schema() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = repo().join("data/smoke/train/checkpoint.c2c");
    let o = c2c(&[
        "eval",
        "--data",
        s(&smoke_data()),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&dir.path().join("metrics.json"));
    for key in ["accuracy", "precision", "recall", "f1", "roc_auc"] {
        assert!(m[key].is_number(), "{key}");
    }
    let ds = load_manifest(smoke_data()).unwrap();
    let rows = fs::read_to_string(dir.path().join("attention.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    assert_eq!(rows, ds.test.iter().map(Bag::len).sum::<usize>());
    let run = json(&dir.path().join("run.json"));
    assert_eq!(run["command"], "eval");

    let train_dir = tempfile::tempdir().unwrap();
    let o = c2c(&[
        "eval",
        "--data",
        s(&smoke_data()),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(train_dir.path()),
        "--split",
        "train",
    ]);
    assert!(o.status.success());
    let rows = fs::read_to_string(train_dir.path().join("attention.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    assert_eq!(rows, ds.train.iter().map(Bag::len).sum::<usize>());
}

#[test]
fn corrupt_checkpoint_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = fs::read(repo().join("data/smoke/train/checkpoint.c2c")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let bad = dir.path().join("bad.c2c");
    fs::write(&bad, bytes).unwrap();
    let o = c2c(&[
        "eval",
        "--data",
        s(&smoke_data()),
        "--checkpoint",
        s(&bad),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
    let o = c2c(&[
        "eval",
        "--data",
        s(&bad),
        "--checkpoint",
        s(&bad),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn train_defaults_and_config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_smoke(&dir.path().join("a"), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = &json(&dir.path().join("a/run.json"))["resolved"];
    assert_eq!(r["k_prime"], 8);
    assert_eq!(r["learning_rate"], 1e-4);
    assert_eq!(
        r["weights"],
        serde_json::json!({"alpha": 1.0, "beta": 0.01, "gamma": 0.1})
    );
    assert_eq!(r["sampling_strategy"], "cluster");
    assert_eq!(r["pooling"], "attention");

    let cfg = dir.path().join("t.toml");
    fs::write(&cfg, "k-prime = 3\ngamma = 0.5\nsampling = \"random\"\n").unwrap();
    let o = train_smoke(&dir.path().join("b"), &["--config", s(&cfg), "--gamma", "0.25"]);
    assert!(o.status.success());
    let r = &json(&dir.path().join("b/run.json"))["resolved"];
    assert_eq!(r["k_prime"], 3);
    assert_eq!(r["weights"]["gamma"], 0.25);
    assert_eq!(r["sampling_strategy"], "random");
}

#[test]
fn zero_gamma_drops_kl_from_the_total() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_smoke(dir.path(), &["--gamma", "0"]);
    assert!(o.status.success());
    let log = fs::read_to_string(dir.path().join("epochs.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let l = &serde_json::from_str::<serde_json::Value>(line).unwrap()["loss"];
        let (w, p, t) = (
            l["l_wsi"].as_f64().unwrap(),
            l["l_patch"].as_f64().unwrap(),
            l["total"].as_f64().unwrap(),
        );
        assert!(l["l_kld"].as_f64().unwrap() >= 0.0);
        assert!((t - (w + 0.01 * p)).abs() < 1e-12, "{line}");
    }
}

#[test]
fn reruns_and_thread_counts_reproduce_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    assert!(c2c(&[
        "--threads",
        "1",
        "train",
        "--data",
        s(&smoke_data()),
        "--out",
        s(&a),
        "--epochs",
        "2",
        "--k",
        "3"
    ])
    .status
    .success());
    let b = dir.path().join("b");
    assert!(c2c(&[
        "--threads",
        "4",
        "train",
        "--data",
        s(&smoke_data()),
        "--out",
        s(&b),
        "--epochs",
        "2",
        "--k",
        "3"
    ])
    .status
    .success());
    let c = dir.path().join("c");
    assert!(c2c(&["rerun", s(&a.join("run.json")), "--out", s(&c)]).status.success());
    let ckpt = fs::read(a.join("checkpoint.c2c")).unwrap();
    assert_eq!(ckpt, fs::read(b.join("checkpoint.c2c")).unwrap());
    assert_eq!(ckpt, fs::read(c.join("checkpoint.c2c")).unwrap());

    let e1 = dir.path().join("e1");
    let e2 = dir.path().join("e2");
    let ck = a.join("checkpoint.c2c");
    assert!(c2c(&[
        "--threads",
        "1",
        "eval",
        "--data",
        s(&smoke_data()),
        "--checkpoint",
        s(&ck),
        "--out",
        s(&e1)
    ])
    .status
    .success());
    assert!(c2c(&["rerun", s(&e1.join("run.json")), "--out", s(&e2)])
        .status
        .success());
    for f in ["metrics.json", "attention.csv", "uniformity.json"] {
        assert_eq!(fs::read(e1.join(f)).unwrap(), fs::read(e2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gradcheck_passes_by_default_and_fails_loudly_when_impossible() {
    let o = c2c(&["gradcheck"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("passed") && out.contains("group"), "{out}");

    let o = c2c(&["gradcheck", "--precision", "f32", "--tolerance", "1e-12"]);
    assert_eq!(o.status.code(), Some(4));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("FAILED") && err.contains("exceeds tolerance") && err.contains("group"),
        "{err}"
    );
}

#[test]
fn ablate_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = c2c(&[
        "ablate",
        "--data",
        s(&smoke_data()),
        "--out",
        s(dir.path()),
        "--epochs",
        "1",
        "--axis",
        "pooling",
        "--values",
        "attention",
        "mean",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = json(&dir.path().join("ablation.json"));
    assert_eq!(rows.as_array().unwrap().len(), 2);
    assert_eq!(rows[1]["value"], "mean");
    assert_eq!(
        fs::read_to_string(dir.path().join("ablation.txt"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}
