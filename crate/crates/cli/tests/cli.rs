use std::path::Path;
use std::process::{Command, Output};

fn evtype(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evtype"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn evtype")
}

fn json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

const SMALL: &str = "\
[autoencoder]
hidden = [16]
latent = 4

[pretrain]
epochs = 10

[cluster]
epochs = 4

[decoder]
epochs = 10

[naming.lda]
iterations = 100
";

/// A small benchmark and a fast config in `dir`.
fn setup(dir: &Path) {
    let out = evtype(
        &[
            "synth", "--out", "data", "--seed", "3", "--base-types", "3", "--novel-types", "2",
            "--base-per-type", "60", "--novel-per-type", "30", "--unknown-per-type", "10", "--dim", "12",
            "--separation", "8",
        ],
        dir,
    );
    let v = json(&out);
    assert_eq!(v["base"], 180);
    assert_eq!(v["pending"], 90);
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(evtype(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(evtype(&["round", "--repeats", "many"], tmp.path()).status.code(), Some(1));
    assert_eq!(evtype(&["round", "--format", "xml"], tmp.path()).status.code(), Some(1));
    assert_eq!(evtype(&["round", "--repeats", "0"], tmp.path()).status.code(), Some(1));
    assert_eq!(evtype(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn missing_data_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = evtype(&["round", "--data", "absent", "--out", "ws"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "seed = [1]\n").unwrap();
    let out = evtype(&["round", "--config", "bad.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn divergence_exits_with_three_and_marks_the_round() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    std::fs::write(
        tmp.path().join("div.toml"),
        SMALL.replace("[pretrain]\nepochs = 10", "[pretrain]\nepochs = 2\nlearning_rate = 1e300"),
    )
    .unwrap();
    let out = evtype(&["round", "--config", "div.toml", "--data", "data", "--out", "ws"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("ws/round_001/INVALID").exists());
}

#[test]
fn round_evaluate_and_review() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let dir = tmp.path();
    let s = json(&evtype(&["round", "--config", "small.toml", "--data", "data", "--out", "ws", "--seed", "5"], dir));
    let new_types = s["new_types"].as_array().unwrap().len();
    assert_eq!(s["registry_size"].as_u64().unwrap() as usize, 3 + new_types);
    assert_eq!(
        s["base_after"].as_u64().unwrap(),
        s["base_before"].as_u64().unwrap() + s["normal"].as_u64().unwrap()
    );
    for f in ["config.toml", "checkpoint.json", "triage.json", "clusters.json", "keywords.json", "metrics.json"] {
        assert!(dir.join("ws/round_001").join(f).exists(), "{f} missing");
    }

    let m = json(&evtype(&["evaluate", "--config", "small.toml", "--data", "data", "--out", "ws"], dir));
    assert!(m["anomaly.auc_roc"].as_f64().is_some());

    if new_types > 0 {
        std::fs::write(dir.join("answers.txt"), "r renamed_type\n").unwrap();
        let r = json(&evtype(&["review", "--out", "ws", "--input", "answers.txt"], dir));
        assert_eq!(r["clusters"][0]["status"]["name"], "renamed_type");
        let reg = std::fs::read_to_string(dir.join("ws/registry.json")).unwrap();
        assert!(reg.contains("\"renamed_type\""));
    }
}

#[test]
fn stepwise_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let dir = tmp.path();
    let base = ["--config", "small.toml", "--data", "data", "--out", "ws"];
    let run = |cmd: &str| json(&evtype(&[&[cmd][..], &base[..]].concat(), dir));
    assert_eq!(run("train")["checkpoint"], "round_001/checkpoint.json");
    let d = run("detect");
    let total: u64 = ["normal", "abnormal", "deferred"].iter().map(|k| d[k].as_u64().unwrap()).sum();
    assert_eq!(total, 90);
    assert_eq!(run("cluster")["events"], d["abnormal"]);
    assert!(run("name")["clusters"].is_array());
    // Nothing is committed by the stage commands.
    assert!(!dir.join("ws/round_001/COMMITTED").exists());
}

#[test]
fn repeats_report_mean_and_std() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let v = json(&evtype(
        &["round", "--config", "small.toml", "--data", "data", "--out", "ws", "--repeats", "2", "--seed", "7"],
        tmp.path(),
    ));
    assert_eq!(v["seeds"], serde_json::json!([7, 8]));
    let auc = &v["metrics"]["anomaly.auc_roc"];
    assert_eq!(auc["values"].as_array().unwrap().len(), 2);
    assert!(auc["mean"].as_f64().is_some() && auc["std"].as_f64().unwrap() >= 0.0);
    assert!(tmp.path().join("ws/repeats.json").exists());
}
