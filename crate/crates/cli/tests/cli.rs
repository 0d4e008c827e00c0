use std::path::Path;
use std::process::{Command, Output};

fn qe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qe")).args(args).current_dir(cwd).env_remove("QE_CONFIG").output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = qe(args, cwd);
    assert!(out.status.success(), "qe {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn toy(dir: &Path) {
    ok(&["toy-corpus", "--pairs", "30", "--annotated", "30", "--dev", "20", "--output-dir", "d"], dir);
}

#[test]
fn pipeline_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy(dir);
    ok(&["gen-stats", "--input", "d/annotated.jsonl", "--output", "stats.json"], dir);
    ok(&["corrupt", "--input", "d/parallel.tsv", "--stats", "stats.json", "--output", "m.jsonl"], dir);
    ok(&["train-lm", "--input", "d/parallel.tsv", "--output", "lm.json"], dir);
    ok(&["fix", "--input", "m.jsonl", "--lm", "lm.json", "--output", "pseudo.jsonl", "--mode", "parallel"], dir);
    ok(&["train-qe", "--pretrain-data", "pseudo.jsonl", "--valid", "d/dev.jsonl", "--output", "pre.json"], dir);
    ok(
        &[
            "train-qe",
            "--finetune-data",
            "d/annotated.jsonl",
            "--init",
            "pre.json",
            "--valid",
            "d/dev.jsonl",
            "--output",
            "ck.json",
        ],
        dir,
    );
    ok(&["predict", "--checkpoint", "ck.json", "--input", "d/dev.jsonl", "--output", "p.tsv"], dir);
    ok(
        &["spans", "--predictions", "p.tsv", "--data", "d/dev.jsonl", "--output", "s.tsv", "--tags-output", "t.tsv"],
        dir,
    );

    let report: serde_json::Value = serde_json::from_str(&ok(
        &["eval", "--task", "sentence", "--gold", "d/dev.jsonl", "--predictions", "p.tsv"],
        dir,
    ))
    .unwrap();
    assert_eq!(report["metric"], "spearman");
    assert!(report["value"].as_f64().unwrap().abs() <= 1.0);

    let report: serde_json::Value =
        serde_json::from_str(&ok(&["eval", "--task", "word", "--gold", "d/dev.jsonl", "--predictions", "t.tsv"], dir))
            .unwrap();
    assert_eq!(report["counts"]["records"], 20);

    let masked = std::fs::read_to_string(dir.join("m.jsonl")).unwrap();
    assert_eq!(masked.lines().count(), 30);
    let effective = std::fs::read_to_string(dir.join("corrupt.config.toml")).unwrap();
    assert!(effective.contains("seed = 1"));
    assert!(!effective.contains("jobs"));
}

#[test]
fn missing_stats_file_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let out =
        qe(&["corrupt", "--input", "d/parallel.tsv", "--stats", "absent.json", "--output", "m.jsonl"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
    assert!(!tmp.path().join("m.jsonl").exists());
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(qe(&["corrupt"], tmp.path()).status.code(), Some(1));
    assert_eq!(qe(&["no-such-command"], tmp.path()).status.code(), Some(1));
    assert_eq!(qe(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn show_config_applies_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(
        &[
            "--seed",
            "9",
            "--show-config",
            "train-qe",
            "--finetune-data",
            "x",
            "--valid",
            "y",
            "--output",
            "z",
            "--beta",
            "5",
        ],
        tmp.path(),
    );
    let v: toml::Table = text.parse().unwrap();
    assert_eq!(v["seed"].as_integer(), Some(9));
    assert_eq!(v["train"]["seed"].as_integer(), Some(9));
    assert_eq!(v["train"]["beta"].as_float(), Some(5.0));
}

#[test]
fn config_file_values_and_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("good.toml"), "seed = 4\n[fix]\nmode = \"parallel\"\n").unwrap();
    let v: toml::Table = ok(&["--config", "good.toml", "--show-config"], tmp.path()).parse().unwrap();
    assert_eq!(v["seed"].as_integer(), Some(4));
    assert_eq!(v["fix"]["mode"].as_str(), Some("parallel"));

    std::fs::write(tmp.path().join("bad.toml"), "[train]\nlearning_rat = 0.1\n").unwrap();
    let out = qe(&["--config", "bad.toml", "--show-config"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn external_sampler_fills_and_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy(dir);
    ok(&["gen-stats", "--synthetic-defaults", "--output", "stats.json"], dir);
    ok(&["corrupt", "--input", "d/parallel.tsv", "--stats", "stats.json", "--output", "m.jsonl"], dir);

    let sampler = r#"while read -r line; do echo '{"tokens":["qqq","rrr"],"probs":[0.6,0.4]}'; done"#;
    ok(&["fix", "--input", "m.jsonl", "--external-cmd", sampler, "--output", "pseudo.jsonl", "--jobs", "3"], dir);
    let filled = std::fs::read_to_string(dir.join("pseudo.jsonl")).unwrap();
    assert_eq!(filled.lines().count(), 30);
    assert!(filled.contains("qqq") || filled.contains("rrr"));
    assert!(!filled.contains("<mask>"));

    let out = qe(&["fix", "--input", "m.jsonl", "--external-cmd", "exit 0", "--output", "x.jsonl"], dir);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.join("x.jsonl").exists());
}

#[test]
fn mismatched_prediction_ids_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy(dir);
    std::fs::write(dir.join("p.tsv"), "nope\t0.5\t0.5\n").unwrap();
    let out = qe(&["eval", "--task", "sentence", "--gold", "d/dev.jsonl", "--predictions", "p.tsv"], dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("d1"));
}
