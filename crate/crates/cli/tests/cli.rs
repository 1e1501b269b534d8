//! End-to-end tests of the `cpm` binary: every subcommand runs against the
//! example corpus, every JSON payload validates against its published schema
//! file, and exit codes follow the 0/1/2 convention.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn corpus() -> PathBuf {
    workspace_root().join("data/example-corpus.txt")
}

/// Runs the binary with `args` plus optional environment overrides.
fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cpm"));
    cmd.args(args).env_remove("CPM_SEED");
    for (key, value) in envs {
        cmd.env(key, value);
    }
    cmd.output().unwrap()
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

/// Asserts `instance` against a schema file under `schemas/`.
fn assert_valid(schema_file: &str, instance: &serde_json::Value) {
    let text = std::fs::read_to_string(workspace_root().join("schemas").join(schema_file))
        .unwrap_or_else(|e| panic!("reading {schema_file}: {e}"));
    let schema: serde_json::Value = serde_json::from_str(&text).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(instance)
        .map(|e| format!("{} at {}", e, e.instance_path()))
        .collect();
    assert!(
        errors.is_empty(),
        "instance violates {schema_file}:\n{}",
        errors.join("\n")
    );
}

/// Fits the example corpus into `dir` and returns the artifact path.
fn fit_example(dir: &Path) -> PathBuf {
    let model = dir.join("model.json");
    let out = run(
        &[
            "fit",
            corpus().to_str().unwrap(),
            "--dim",
            "2",
            "--out",
            model.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "fit failed: {}", stderr_str(&out));
    model
}

fn parse_error(out: &Output) -> (String, serde_json::Value) {
    let line = stderr_str(out);
    let value: serde_json::Value =
        serde_json::from_str(line.trim()).unwrap_or_else(|e| panic!("bad error JSON {line}: {e}"));
    assert_valid("error.schema.json", &value);
    (value["error"]["kind"].as_str().unwrap().to_string(), value)
}

#[test]
fn fit_emits_valid_summary_artifact_and_points() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let points = dir.path().join("points.json");
    let out = run(
        &[
            "fit",
            corpus().to_str().unwrap(),
            "--dim",
            "2",
            "--out",
            model.to_str().unwrap(),
            "--emit-points",
            points.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr_str(&out));

    let summary: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
    assert_valid("fit-summary.schema.json", &summary);
    assert!(summary["volume"].as_f64().unwrap() > 0.0);
    assert!(summary["max_violation"].as_f64().unwrap() <= 1e-6);

    let artifact: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_valid("model-artifact.schema.json", &artifact);
    assert_eq!(artifact["config"]["dim"], 2);
    assert_eq!(artifact["simplex"]["vertices"]["rows"], 3);

    let scatter: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&points).unwrap()).unwrap();
    assert_valid("fit-points.schema.json", &scatter);
    assert_eq!(scatter["points"]["cols"], 2);
    assert_eq!(
        scatter["points"]["rows"].as_u64().unwrap(),
        artifact["provenance"]["line_count"].as_u64().unwrap()
    );
}

#[test]
fn fit_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let first = fit_example(dir.path());
    let bytes_first = std::fs::read(&first).unwrap();
    let again = dir.path().join("model2.json");
    let out = run(
        &[
            "fit",
            corpus().to_str().unwrap(),
            "--dim",
            "2",
            "--out",
            again.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success());
    assert_eq!(bytes_first, std::fs::read(&again).unwrap());
}

#[test]
fn fit_with_excessive_dim_exits_2_with_rank_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "fit",
            corpus().to_str().unwrap(),
            "--dim",
            "500",
            "--out",
            dir.path().join("m.json").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let (kind, _) = parse_error(&out);
    assert_eq!(kind, "invalid_parameter");

    // A corpus of two repeated lines spans a 1-dimensional cloud: asking
    // for more directions than the data has is a rank error.
    let repeated = dir.path().join("flat.txt");
    let mut lines = Vec::new();
    for _ in 0..5 {
        lines.push("alpha beta gamma delta");
        lines.push("alpha beta gamma epsilon");
    }
    std::fs::write(&repeated, lines.join("\n")).unwrap();
    let out = run(
        &[
            "fit",
            repeated.to_str().unwrap(),
            "--dim",
            "4",
            "--out",
            dir.path().join("m2.json").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let (kind, _) = parse_error(&out);
    assert_eq!(kind, "rank_deficient");
}

#[test]
fn missing_corpus_exits_1_with_io_error() {
    let out = run(
        &["fit", "/nonexistent/corpus.txt", "--out", "/tmp/x.json"],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    let (kind, _) = parse_error(&out);
    assert_eq!(kind, "io");
}

#[test]
fn corrupted_schema_version_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit_example(dir.path());
    let text = std::fs::read_to_string(&model)
        .unwrap()
        .replace("\"schema_version\": 1", "\"schema_version\": 99");
    std::fs::write(&model, text).unwrap();
    let out = run(
        &["topwords", "--model", model.to_str().unwrap(), "--all"],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let (kind, value) = parse_error(&out);
    assert_eq!(kind, "schema_version");
    let message = value["error"]["message"].as_str().unwrap();
    assert!(
        message.contains("99"),
        "message should name the version: {message}"
    );
}

#[test]
fn topwords_single_vertex_and_all_validate() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit_example(dir.path());
    let model = model.to_str().unwrap();

    let single = run(
        &["topwords", "--model", model, "--vertex", "1", "--k", "5"],
        &[],
    );
    assert!(single.status.success());
    let value: serde_json::Value = serde_json::from_str(&stdout_str(&single)).unwrap();
    assert_valid("topwords.schema.json", &value);
    assert_eq!(value["tables"].as_array().unwrap().len(), 1);
    assert_eq!(value["tables"][0]["words"].as_array().unwrap().len(), 5);

    let all = run(&["topwords", "--model", model, "--all", "--k", "5"], &[]);
    assert!(all.status.success());
    let value: serde_json::Value = serde_json::from_str(&stdout_str(&all)).unwrap();
    assert_valid("topwords.schema.json", &value);
    assert_eq!(value["tables"].as_array().unwrap().len(), 3);

    // Smaller k yields a prefix of the larger table.
    let small = run(
        &["topwords", "--model", model, "--vertex", "1", "--k", "3"],
        &[],
    );
    let small: serde_json::Value = serde_json::from_str(&stdout_str(&small)).unwrap();
    let big = run(
        &["topwords", "--model", model, "--vertex", "1", "--k", "5"],
        &[],
    );
    let big: serde_json::Value = serde_json::from_str(&stdout_str(&big)).unwrap();
    assert_eq!(
        small["tables"][0]["words"].as_array().unwrap()[..],
        big["tables"][0]["words"].as_array().unwrap()[..3]
    );

    let bad = run(&["topwords", "--model", model, "--vertex", "9"], &[]);
    assert_eq!(bad.status.code(), Some(2));
    let (kind, _) = parse_error(&bad);
    assert_eq!(kind, "index_out_of_range");
}

#[test]
fn nearest_lists_texts_ascending_and_warns_on_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit_example(dir.path());
    let out = run(
        &[
            "nearest",
            "--model",
            model.to_str().unwrap(),
            "--corpus",
            corpus().to_str().unwrap(),
            "--vertex",
            "0",
            "-m",
            "4",
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr_str(&out));
    assert!(stderr_str(&out).is_empty(), "no warning expected");
    let value: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_valid("nearest.schema.json", &value);
    let neighbors = value["neighbors"].as_array().unwrap();
    assert_eq!(neighbors.len(), 4);
    let corpus_lines: Vec<String> = std::fs::read_to_string(corpus())
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    let mut last = 0.0;
    for n in neighbors {
        let d = n["distance"].as_f64().unwrap();
        assert!(d >= last, "distances must ascend");
        last = d;
        let id = n["id"].as_u64().unwrap() as usize;
        assert_eq!(n["text"].as_str().unwrap(), corpus_lines[id - 1]);
    }

    // A corpus with a different usable-line count triggers a warning but
    // still succeeds.
    let truncated = dir.path().join("short.txt");
    let head: Vec<&str> = corpus_lines.iter().map(String::as_str).take(12).collect();
    std::fs::write(&truncated, head.join("\n")).unwrap();
    let out = run(
        &[
            "nearest",
            "--model",
            model.to_str().unwrap(),
            "--corpus",
            truncated.to_str().unwrap(),
            "--vertex",
            "0",
        ],
        &[],
    );
    assert!(out.status.success());
    assert!(stderr_str(&out).contains("warning"), "{}", stderr_str(&out));
}

#[test]
fn coeffs_emits_a_convex_combination() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit_example(dir.path());
    let out = run(
        &[
            "coeffs",
            "--model",
            model.to_str().unwrap(),
            "--text",
            "book a cheap hotel with free parking",
        ],
        &[],
    );
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert_eq!(text.trim().lines().count(), 1, "one JSON line expected");
    let value: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    assert_valid("coeffs.schema.json", &value);
    let coeffs: Vec<f64> = value
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(coeffs.len(), 3);
    assert!((coeffs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    assert!(coeffs.iter().all(|&c| c >= 0.0));

    let empty = run(
        &["coeffs", "--model", model.to_str().unwrap(), "--text", ""],
        &[],
    );
    assert_eq!(empty.status.code(), Some(2));
    let (kind, _) = parse_error(&empty);
    assert_eq!(kind, "empty_tokens");
}

#[test]
fn simmatrix_json_validates_and_csv_parses() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit_example(dir.path());
    let model = model.to_str().unwrap();
    let text = "train to london on friday";

    let out = run(
        &[
            "simmatrix",
            "--model",
            model,
            "--text",
            text,
            "--format",
            "json",
        ],
        &[],
    );
    assert!(out.status.success());
    let value: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_valid("simmatrix.schema.json", &value);
    let t = value["tokens"].as_array().unwrap().len();
    assert_eq!(value["raw"]["rows"].as_u64().unwrap() as usize, t);

    // Row-softmax rows sum to 1.
    let hat = value["hat"]["data"].as_array().unwrap();
    for i in 0..t {
        let sum: f64 = (0..t).map(|j| hat[i * t + j].as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() <= 1e-9);
    }

    let out = run(
        &[
            "simmatrix",
            "--model",
            model,
            "--text",
            text,
            "--format",
            "csv",
        ],
        &[],
    );
    assert!(out.status.success());
    let csv_text = stdout_str(&out);
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = reader.headers().unwrap().clone();
    assert_eq!(&headers[0], "matrix");
    assert_eq!(&headers[1], "token");
    assert_eq!(headers.len(), 2 + t);
    let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 2 * t, "one raw and one hat block");
    assert!(records[..t].iter().all(|r| &r[0] == "raw"));
    assert!(records[t..].iter().all(|r| &r[0] == "hat"));
    // Cells parse back to the JSON values exactly.
    let raw = value["raw"]["data"].as_array().unwrap();
    for i in 0..t {
        for j in 0..t {
            let cell: f64 = records[i][2 + j].parse().unwrap();
            assert_eq!(cell, raw[i * t + j].as_f64().unwrap());
        }
    }
}

#[test]
fn attend_satisfies_row_sum_identity_and_gate_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit_example(dir.path());
    let out = run(
        &[
            "attend",
            "--model",
            model.to_str().unwrap(),
            "--text",
            "book a train to london",
            "--heads",
            "2",
            "--head-dim",
            "4",
            "--seed",
            "11",
            "--vanilla",
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr_str(&out));
    let value: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_valid("attend.schema.json", &value);
    let n = value["tokens"].as_array().unwrap().len();
    for head in value["per_head"].as_array().unwrap() {
        let lam_q: Vec<f64> = head["lambda_q"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        let lam_k: Vec<f64> = head["lambda_k"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        let data = head["attention"]["data"].as_array().unwrap();
        for i in 0..n {
            let sum: f64 = (0..n).map(|j| data[i * n + j].as_f64().unwrap()).sum();
            let expected = 1.0 + 0.5 * (lam_q[i] + lam_k[i]);
            assert!(
                (sum - expected).abs() <= 1e-8,
                "row {i}: {sum} vs {expected}"
            );
        }
        // Vanilla rows are plain softmax rows.
        let vanilla = head["vanilla"]["data"].as_array().unwrap();
        for i in 0..n {
            let sum: f64 = (0..n).map(|j| vanilla[i * n + j].as_f64().unwrap()).sum();
            assert!((sum - 1.0).abs() <= 1e-9);
        }
    }

    // Without --vanilla the comparison matrices are omitted.
    let plain = run(
        &[
            "attend",
            "--model",
            model.to_str().unwrap(),
            "--text",
            "book a train",
        ],
        &[],
    );
    assert!(plain.status.success());
    let value: serde_json::Value = serde_json::from_str(&stdout_str(&plain)).unwrap();
    assert_valid("attend.schema.json", &value);
    assert!(value["per_head"][0].get("vanilla").is_none());
}

#[test]
fn attend_single_token_yields_one_by_one_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit_example(dir.path());
    let out = run(
        &[
            "attend",
            "--model",
            model.to_str().unwrap(),
            "--text",
            "hello",
            "--heads",
            "1",
            "--head-dim",
            "2",
        ],
        &[],
    );
    assert!(out.status.success());
    let value: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(value["per_head"][0]["attention"]["rows"], 1);
    assert_eq!(value["per_head"][0]["attention"]["cols"], 1);
}

#[test]
fn attribute_ranks_by_magnitude_for_both_targets() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit_example(dir.path());
    for (target, expected_labels) in [("vertex-coeffs", 3usize), ("tokens", 5usize)] {
        let out = run(
            &[
                "attribute",
                "--model",
                model.to_str().unwrap(),
                "--text",
                "book a train to london",
                "--target",
                target,
                "--top",
                "3",
                "--seed",
                "5",
            ],
            &[],
        );
        assert!(out.status.success(), "{}", stderr_str(&out));
        let value: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
        assert_valid("attribute.schema.json", &value);
        assert_eq!(value["target"], target);
        assert_eq!(value["labels"].as_array().unwrap().len(), expected_labels);
        let top = value["top"].as_array().unwrap();
        assert_eq!(top.len(), 3);
        let magnitudes: Vec<f64> = top
            .iter()
            .map(|t| t["attribution"].as_f64().unwrap().abs())
            .collect();
        assert!(
            magnitudes.windows(2).all(|w| w[0] >= w[1]),
            "top must descend in magnitude: {magnitudes:?}"
        );
        // Each ranked entry echoes the signed value at its index.
        let attr = value["attributions"].as_array().unwrap();
        for t in top {
            let idx = t["index"].as_u64().unwrap() as usize;
            assert_eq!(t["attribution"], attr[idx]);
        }
    }

    let bad = run(
        &[
            "attribute",
            "--model",
            model.to_str().unwrap(),
            "--text",
            "book a train",
            "--target",
            "vertex-coeffs",
            "--top",
            "9",
        ],
        &[],
    );
    assert_eq!(bad.status.code(), Some(2));
    let (kind, _) = parse_error(&bad);
    assert_eq!(kind, "invalid_parameter");
}

#[test]
fn cpm_seed_env_is_the_fallback_seed() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit_example(dir.path());
    let model = model.to_str().unwrap();
    let args = ["attend", "--model", model, "--text", "book a train"];

    let via_env = run(&args, &[("CPM_SEED", "77")]);
    let mut with_flag = args.to_vec();
    with_flag.extend(["--seed", "77"]);
    let via_flag = run(&with_flag, &[]);
    assert!(via_env.status.success() && via_flag.status.success());
    assert_eq!(stdout_str(&via_env), stdout_str(&via_flag));

    // The flag wins over the environment.
    let flag_overrides = run(&with_flag, &[("CPM_SEED", "123")]);
    assert_eq!(stdout_str(&flag_overrides), stdout_str(&via_flag));

    let default = run(&args, &[]);
    assert_ne!(stdout_str(&default), stdout_str(&via_env));
}
