//! End-to-end tests of the `bench` binary: flag handling, output files,
//! determinism, and honest encoding of failed fits.

use std::path::Path;
use std::process::{Command, Output};

use varsamp_bench::{read_records_csv, write_records_csv, BenchRecord, Manifest};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(args)
        .output()
        .expect("spawning the bench binary")
}

fn read_records(dir: &Path) -> Vec<BenchRecord> {
    let file = std::fs::File::open(dir.join("records.csv")).unwrap();
    read_records_csv(file).unwrap()
}

#[test]
fn end_to_end_run_writes_parseable_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let output = bench(&[
        "run",
        "--dims",
        "1",
        "--betas",
        "2",
        "--factors",
        "1,2",
        "--reps",
        "2",
        "--strategies",
        "matched,annealed",
        "--methods",
        "is,vs,bmc",
        "--threads",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("median_eps"), "summary table: {stdout}");
    assert!(stdout.contains("desk-scale run"), "scale note: {stdout}");

    // 2 strategies x 1 dim x 1 shape x 2 factors = 4 cells,
    // each with 2 replications x 3 methods.
    let records = read_records(&out);
    assert_eq!(records.len(), 4 * 2 * 3);

    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    let manifest_text = serde_json::to_string(&manifest).unwrap();
    assert!(manifest_text.contains("exp_power:beta=2"));
    assert!(manifest_text.contains("\"record_count\":24"));

    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    // Header plus one row per (cell, method).
    assert_eq!(summary.lines().count(), 1 + 4 * 3);
}

#[test]
fn explicit_flags_override_config_file_and_paper() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.toml");
    std::fs::write(
        &config_path,
        r#"
        dims = [4]
        betas = [2.0]
        factors = [1]
        replications = 2
        strategies = ["matched"]
        methods = ["is"]
        seed = 7
        threads = 1
        "#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let output = bench(&[
        "run",
        "--config",
        config_path.to_str().unwrap(),
        "--paper",
        "--dims",
        "1",
        "--reps",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    let config = &parsed["config"];
    // --dims beats both the file ([4]) and --paper ([1, 10]).
    assert_eq!(config["dims"], serde_json::json!([1]));
    // --reps beats both the file (2) and --paper (100).
    assert_eq!(config["replications"], 3);
    // --paper beats the file's implicit default ladder length.
    assert_eq!(config["anneal"]["steps"], 1000);
    // Untouched file values survive.
    assert_eq!(config["seed"], 7);
    assert_eq!(config["methods"], serde_json::json!(["is"]));

    let records = read_records(&out);
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|r| r.d == 1));
}

#[test]
fn reruns_are_deterministic_apart_from_wall_clock() {
    let dir = tempfile::tempdir().unwrap();
    let args_for = |out: &Path| {
        vec![
            "run".to_string(),
            "--dims".into(),
            "1".into(),
            "--betas".into(),
            "1,2".into(),
            "--factors".into(),
            "1,4".into(),
            "--reps".into(),
            "3".into(),
            "--strategies".into(),
            "matched".into(),
            "--seed".into(),
            "99".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let args: Vec<String> = args_for(out);
        let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let output = bench(&arg_refs);
        assert!(output.status.success());
    }

    // Manifests carry no timestamps, so they match byte for byte.
    assert_eq!(
        std::fs::read(out_a.join("manifest.json")).unwrap(),
        std::fs::read(out_b.join("manifest.json")).unwrap()
    );

    // Records match byte for byte once the wall-clock columns are cleared.
    let normalize = |dir: &Path| {
        let mut records = read_records(dir);
        for record in &mut records {
            record.fit_seconds = 0.0;
            record.sampling_seconds = 0.0;
        }
        let mut bytes = Vec::new();
        write_records_csv(&mut bytes, &records).unwrap();
        bytes
    };
    assert_eq!(normalize(&out_a), normalize(&out_b));
}

#[test]
fn improper_fits_write_infinite_divergences() {
    // An undamped squared-exponential kernel much wider than the point
    // spread is numerically singular, so these Bayesian Monte Carlo fits
    // all fail and must be recorded as improper with infinite divergence.
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.toml");
    std::fs::write(
        &config_path,
        r#"
        dims = [1]
        betas = [2.0]
        factors = [32]
        replications = 3
        strategies = ["matched"]
        methods = ["bmc"]
        seed = 42
        threads = 1

        [bmc]
        damping = 0.0
        kernel_variance = 100.0
        "#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let output = bench(&[
        "run",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success());

    let text = std::fs::read_to_string(out.join("records.csv")).unwrap();
    assert!(text.contains(",inf,"), "literal inf in records: {text}");
    let records = read_records(&out);
    assert!(records.iter().all(|r| r.improper && r.epsilon.is_infinite()));

    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains(",inf,"), "literal inf in summary: {summary}");
}

#[test]
fn json_format_emits_parseable_arrays() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let output = bench(&[
        "run",
        "--dims",
        "1",
        "--betas",
        "2",
        "--factors",
        "1",
        "--reps",
        "2",
        "--strategies",
        "matched",
        "--methods",
        "is",
        "--format",
        "json",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let records: Vec<BenchRecord> =
        serde_json::from_str(&std::fs::read_to_string(out.join("records.json")).unwrap()).unwrap();
    assert_eq!(records.len(), 2);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 1);
    assert!(!out.join("records.csv").exists());
}

#[test]
fn invalid_settings_fail_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let output = bench(&["run", "--dims", "0", "--out", out.to_str().unwrap()]);
    assert!(!output.status.success());
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("positive"), "stderr: {stderr}");
    assert!(!out.exists(), "no output directory on failure");

    let output = bench(&["run", "--strategies", "bogus"]);
    assert!(!output.status.success());
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("unknown strategy"), "stderr: {stderr}");
}
