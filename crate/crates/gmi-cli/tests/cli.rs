//! End-to-end checks of the `gmi` binary: output files, exit codes, and
//! bitwise reproducibility across reruns.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gmi_core::graph::write_split_masks;
use gmi_core::synth::{community_graph, stratified_masks, write_citation_files, CommunityConfig};
use tempfile::TempDir;

fn gmi() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gmi"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("launch gmi binary")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

/// Writes a small labeled community graph in citation format plus split
/// masks, returning the dataset prefix (no extension).
fn fixture(dir: &Path) -> PathBuf {
    let config = CommunityConfig {
        classes: 3,
        nodes_per_class: 10,
        feature_dim: 12,
        p_in: 0.3,
        p_out: 0.03,
        p_feat_on: 0.55,
        p_feat_off: 0.05,
        seed: 5,
    };
    let graph = community_graph(&config);
    write_citation_files(&graph, dir, "toy").unwrap();
    let masks = stratified_masks(graph.labels().unwrap(), 3, 6, 12, 2);
    write_split_masks(&dir.join("toy.splits"), &masks).unwrap();
    dir.join("toy")
}

fn train_args(prefix: &Path, out: &Path) -> Vec<String> {
    vec![
        "train".into(),
        "--dataset".into(),
        prefix.display().to_string(),
        "--out".into(),
        out.display().to_string(),
        "--seed".into(),
        "7".into(),
        "--hidden-dim".into(),
        "8".into(),
        "--fixed-epochs".into(),
        "25".into(),
    ]
}

#[test]
fn train_writes_outputs_and_reruns_bitwise() {
    let dir = TempDir::new().unwrap();
    let prefix = fixture(dir.path());
    let before: Vec<Vec<u8>> = ["toy.content", "toy.cites", "toy.splits"]
        .iter()
        .map(|name| std::fs::read(dir.path().join(name)).unwrap())
        .collect();

    let out1 = dir.path().join("run1");
    let output = run(gmi().args(train_args(&prefix, &out1)));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    for name in ["checkpoint.bin", "embeddings.tsv", "history.tsv", "config.resolved"] {
        assert!(out1.join(name).is_file(), "missing {name}");
    }
    let history = std::fs::read_to_string(out1.join("history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 25);

    // Rerunning from the echoed config must reproduce every output byte.
    let out2 = dir.path().join("run2");
    let output = run(gmi().args([
        "train",
        "--config",
        &out1.join("config.resolved").display().to_string(),
        "--out",
        &out2.display().to_string(),
    ]));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    for name in ["checkpoint.bin", "embeddings.tsv", "history.tsv"] {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    let after: Vec<Vec<u8>> = ["toy.content", "toy.cites", "toy.splits"]
        .iter()
        .map(|name| std::fs::read(dir.path().join(name)).unwrap())
        .collect();
    assert_eq!(before, after, "training mutated its input files");
}

#[test]
fn missing_dataset_is_a_data_error_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let output = run(gmi().args([
        "train",
        "--dataset",
        &dir.path().join("nope").display().to_string(),
        "--out",
        &dir.path().join("out").display().to_string(),
    ]));
    assert_eq!(exit_code(&output), 2);
    assert!(stderr_of(&output).contains("nope"), "stderr: {}", stderr_of(&output));
}

#[test]
fn out_of_range_alpha_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let prefix = fixture(dir.path());
    let mut args = train_args(&prefix, &dir.path().join("out"));
    args.extend(["--alpha".into(), "2.0".into()]);
    let output = run(gmi().args(args));
    assert_eq!(exit_code(&output), 1, "stderr: {}", stderr_of(&output));
}

#[test]
fn unknown_flag_is_a_config_error_and_help_is_not() {
    let output = run(gmi().args(["train", "--bogus"]));
    assert_eq!(exit_code(&output), 1);
    let output = run(gmi().arg("--help"));
    assert_eq!(exit_code(&output), 0);
}

#[test]
fn verify_passes_and_prints_each_property() {
    let output = run(gmi().args(["verify", "--tables", "15", "--seed", "3"]));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    let stdout = stdout_of(&output);
    for name in ["mi-monotonicity", "mi-sandwich", "mi-factorization", "grad-check"] {
        assert!(stdout.contains(&format!("PASS {name}")), "no PASS line for {name}:\n{stdout}");
    }
    assert!(stdout.contains("all properties hold"));
}

#[test]
fn verify_catches_an_injected_gradient_bug() {
    let output = run(gmi().args(["verify", "--tables", "5", "--seed", "3", "--inject-grad-bug"]));
    assert_eq!(exit_code(&output), 4);
    assert!(stderr_of(&output).contains("grad-check"), "stderr: {}", stderr_of(&output));
}

#[test]
fn classify_report_shape_follows_run_count() {
    let dir = TempDir::new().unwrap();
    let prefix = fixture(dir.path());
    let train_out = dir.path().join("train");
    let output = run(gmi().args(train_args(&prefix, &train_out)));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    let checkpoint = train_out.join("checkpoint.bin");

    let cls_out = dir.path().join("cls");
    let output = run(gmi().args([
        "classify",
        "--dataset",
        &prefix.display().to_string(),
        "--checkpoint",
        &checkpoint.display().to_string(),
        "--out",
        &cls_out.display().to_string(),
        "--runs",
        "3",
    ]));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    let ndjson = std::fs::read_to_string(cls_out.join("report.ndjson")).unwrap();
    let lines: Vec<&str> = ndjson.lines().collect();
    assert_eq!(lines.len(), 4, "expected 3 run records plus 1 aggregate");
    let aggregate: serde_json::Value = serde_json::from_str(lines[3]).unwrap();
    assert_eq!(aggregate["record"], "aggregate");
    assert_eq!(aggregate["runs"], 3);
    assert_eq!(aggregate["wall_clock_seconds"], 0.0);

    // A single run has no spread by definition.
    let one_out = dir.path().join("cls one");
    let output = run(gmi().args([
        "classify",
        "--dataset",
        &prefix.display().to_string(),
        "--checkpoint",
        &checkpoint.display().to_string(),
        "--out",
        &one_out.display().to_string(),
        "--runs",
        "1",
    ]));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    let ndjson = std::fs::read_to_string(one_out.join("report.ndjson")).unwrap();
    let aggregate: serde_json::Value =
        serde_json::from_str(ndjson.lines().last().unwrap()).unwrap();
    assert_eq!(aggregate["accuracy_std"], 0.0);
}

#[test]
fn classify_without_split_masks_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let prefix = fixture(dir.path());
    let train_out = dir.path().join("train");
    let output = run(gmi().args(train_args(&prefix, &train_out)));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));

    // Same graph written under a stem with no .splits file alongside it.
    let config = CommunityConfig {
        classes: 3,
        nodes_per_class: 10,
        feature_dim: 12,
        p_in: 0.3,
        p_out: 0.03,
        p_feat_on: 0.55,
        p_feat_off: 0.05,
        seed: 5,
    };
    write_citation_files(&community_graph(&config), dir.path(), "nosplit").unwrap();
    let output = run(gmi().args([
        "classify",
        "--dataset",
        &dir.path().join("nosplit").display().to_string(),
        "--checkpoint",
        &train_out.join("checkpoint.bin").display().to_string(),
        "--out",
        &dir.path().join("cls").display().to_string(),
    ]));
    assert_eq!(exit_code(&output), 2, "stderr: {}", stderr_of(&output));
}

#[test]
fn classify_requires_exactly_one_embedding_source() {
    let dir = TempDir::new().unwrap();
    let prefix = fixture(dir.path());
    let output = run(gmi().args([
        "classify",
        "--dataset",
        &prefix.display().to_string(),
        "--out",
        &dir.path().join("cls").display().to_string(),
    ]));
    assert_eq!(exit_code(&output), 1, "stderr: {}", stderr_of(&output));
}

#[test]
fn zero_runs_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let prefix = fixture(dir.path());
    let output = run(gmi().args([
        "linkpred",
        "--dataset",
        &prefix.display().to_string(),
        "--out",
        &dir.path().join("lp").display().to_string(),
        "--runs",
        "0",
    ]));
    assert_eq!(exit_code(&output), 1, "stderr: {}", stderr_of(&output));
}

#[test]
fn linkpred_reruns_remove_the_same_edges() {
    let dir = TempDir::new().unwrap();
    let prefix = fixture(dir.path());
    let lp_args = |out: &Path| {
        vec![
            "linkpred".into(),
            "--dataset".into(),
            prefix.display().to_string(),
            "--out".into(),
            out.display().to_string(),
            "--seed".into(),
            "9".into(),
            "--hidden-dim".into(),
            "8".into(),
            "--fixed-epochs".into(),
            "20".into(),
            "--ratio".into(),
            "0.2".into(),
            "--runs".into(),
            "2".into(),
        ]
    };
    let out1 = dir.path().join("lp1");
    let output = run(gmi().args(lp_args(&out1)));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    let removed = std::fs::read_to_string(out1.join("removed_edges.tsv")).unwrap();
    assert!(!removed.is_empty());

    let out2 = dir.path().join("lp2");
    let output = run(gmi().args(lp_args(&out2)));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    for name in ["removed_edges.tsv", "embeddings.tsv", "report.ndjson", "report.txt"] {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical linkpred runs");
    }
}

#[test]
fn cached_and_text_datasets_train_identically() {
    let dir = TempDir::new().unwrap();
    let prefix = fixture(dir.path());
    let cache_dir = dir.path().join("cached");
    let output = run(gmi().args([
        "export-cache",
        "--dataset",
        &prefix.display().to_string(),
        "--out",
        &cache_dir.display().to_string(),
    ]));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    assert!(cache_dir.join("cache.bin").is_file());

    let text_out = dir.path().join("from_text");
    let output = run(gmi().args(train_args(&prefix, &text_out)));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));

    let cache_out = dir.path().join("from_cache");
    let output = run(gmi().args(train_args(&cache_dir.join("cache"), &cache_out)));
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));

    let a = std::fs::read(text_out.join("embeddings.tsv")).unwrap();
    let b = std::fs::read(cache_out.join("embeddings.tsv")).unwrap();
    assert_eq!(a, b, "cache round trip changed the training result");
}
