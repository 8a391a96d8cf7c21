//! End-to-end tests of the `corrnoise` binary: exit codes, file outputs,
//! determinism, and the documented report schemas.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_corrnoise"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_json(dir: &Path, name: &str, value: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn trace_config(out: &Path) -> serde_json::Value {
    serde_json::json!({
        "trace": {
            "entries": 48,
            "iterations": 12,
            "batch_size": 8,
            "pooling": 1,
            "zipf_alpha": 0.9,
            "seed": 77
        },
        "out": out
    })
}

#[test]
fn gen_trace_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a.trace");
    let out_b = dir.path().join("b.trace");
    let cfg_a = write_json(dir.path(), "a.json", trace_config(&out_a));
    let cfg_b = write_json(dir.path(), "b.json", trace_config(&out_b));
    assert!(run(&["gen-trace", "--config", cfg_a.to_str().unwrap()]).status.success());
    assert!(run(&["gen-trace", "--config", cfg_b.to_str().unwrap()]).status.success());
    assert_eq!(
        std::fs::read(&out_a).unwrap(),
        std::fs::read(&out_b).unwrap(),
        "same config and seed must produce byte-identical traces"
    );
}

#[test]
fn gen_trace_infeasible_config_names_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.trace");
    let mut cfg = trace_config(&out);
    cfg["trace"]["entries"] = serde_json::json!(10_000);
    let path = write_json(dir.path(), "bad.json", cfg);
    let result = run(&["gen-trace", "--config", path.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1));
    let err = stderr_of(&result);
    assert!(err.contains("cannot cover"), "stderr: {err}");
}

#[test]
fn gen_trace_alpha_sweep_emits_one_file_per_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.trace");
    let mut cfg = trace_config(&out);
    cfg["alpha_sweep"] = serde_json::json!([0.0, 0.5, 1.2]);
    let path = write_json(dir.path(), "sweep.json", cfg);
    assert!(run(&["gen-trace", "--config", path.to_str().unwrap()]).status.success());
    for alpha in ["0", "0.5", "1.2"] {
        let expect = dir.path().join(format!("sweep_alpha{alpha}.trace"));
        assert!(expect.exists(), "missing {}", expect.display());
    }
    assert!(!out.exists(), "sweep must not write the bare path");
}

fn toy_precompute_config(dir: &Path, seed: u64) -> serde_json::Value {
    let trace_path = dir.join("toy.trace");
    std::fs::write(&trace_path, "0:1\n1:2\n2:1\n3:0,2\n").unwrap();
    serde_json::json!({
        "plan": {"seed": seed},
        "mixing": {"n": 4, "band": 2, "toeplitz": [1.0, -0.5]},
        "trace": trace_path,
        "dim": 2,
        "threshold": 1_000_000,
        "out_store": dir.join("toy.cns"),
        "out_stats": dir.join("toy.stats.json")
    })
}

#[test]
fn precompute_reproduces_the_toy_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "pre.json", toy_precompute_config(dir.path(), 5));
    let result = run(&["precompute", "--config", cfg.to_str().unwrap()]);
    assert!(result.status.success(), "{}", stderr_of(&result));
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("toy.stats.json")).unwrap())
            .unwrap();
    let measured = &stats["measured"];
    assert_eq!(measured["nnz"], 7);
    assert_eq!(measured["avg_noise_entries"], 1.75);
    // payload formula: avg * dim * n * width = 1.75 * 2 * 4 * 8
    assert_eq!(measured["payload_bytes"], 112);
    let store_len = std::fs::metadata(dir.path().join("toy.cns")).unwrap().len();
    assert_eq!(measured["file_bytes"], store_len);
}

#[test]
fn precompute_is_deterministic_and_warns_on_all_hot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg1 = write_json(dir.path(), "p1.json", toy_precompute_config(dir.path(), 9));
    let result1 = run(&["precompute", "--config", cfg1.to_str().unwrap()]);
    assert!(result1.status.success());
    let bytes1 = std::fs::read(dir.path().join("toy.cns")).unwrap();
    let result2 = run(&["precompute", "--config", cfg1.to_str().unwrap()]);
    assert!(result2.status.success());
    assert_eq!(bytes1, std::fs::read(dir.path().join("toy.cns")).unwrap());

    // threshold 0 marks everything hot: empty store plus a warning
    let result = run(&[
        "precompute",
        "--config",
        cfg1.to_str().unwrap(),
        "--set",
        "threshold=0",
    ]);
    assert!(result.status.success());
    assert!(stderr_of(&result).contains("store is empty"), "{}", stderr_of(&result));
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("toy.stats.json")).unwrap())
            .unwrap();
    assert_eq!(stats["measured"]["nnz"], 0);
}

#[test]
fn verify_defaults_pass_with_exit_zero() {
    let result = run(&["verify"]);
    let out = stdout_of(&result);
    assert_eq!(result.status.code(), Some(0), "stdout: {out}");
    assert!(out.contains("[PASS] factorization"), "{out}");
    assert!(out.contains("[PASS] eager-lazy"), "{out}");
    assert!(!out.contains("[FAIL]"), "{out}");
}

#[test]
fn verify_detects_a_corrupted_store() {
    let dir = tempfile::tempdir().unwrap();
    // Build a store with the same inputs the default verify config uses.
    let cfg = serde_json::json!({
        "plan": {"seed": 1002},
        "mixing": {"n": 24, "band": 3, "toeplitz": [1.0, -0.45, 0.2]},
        "trace": {
            "entries": 32, "iterations": 24, "batch_size": 4,
            "pooling": 2, "zipf_alpha": 1.1, "seed": 1001
        },
        "dim": 3,
        "threshold": 6,
        "out_store": dir.path().join("v.cns"),
        "out_stats": dir.path().join("v.stats.json")
    });
    let cfg = write_json(dir.path(), "build.json", cfg);
    assert!(run(&["precompute", "--config", cfg.to_str().unwrap()]).status.success());

    let store_path = dir.path().join("v.cns");
    let verify_cfg = write_json(
        dir.path(),
        "verify.json",
        serde_json::json!({"store": store_path}),
    );
    let clean = run(&["verify", "--config", verify_cfg.to_str().unwrap()]);
    assert_eq!(clean.status.code(), Some(0), "{}", stdout_of(&clean));

    // Flip a value byte near the end of the file (indices stay valid).
    let mut bytes = std::fs::read(&store_path).unwrap();
    let k = bytes.len() - 5;
    bytes[k] ^= 0xff;
    std::fs::write(&store_path, &bytes).unwrap();
    let corrupt = run(&["verify", "--config", verify_cfg.to_str().unwrap()]);
    assert_eq!(corrupt.status.code(), Some(2), "{}", stdout_of(&corrupt));
    let out = stdout_of(&corrupt);
    assert!(out.contains("[FAIL]"), "{out}");
}

#[test]
fn simulate_band_sweep_shows_the_crossover() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("sweep.csv");
    let cfg = write_json(
        dir.path(),
        "sim.json",
        serde_json::json!({
            "sweep": [{"path": "band", "values": [2, 4, 8, 16, 32, 64]}],
            "out_csv": csv_path,
            "out_json": dir.path().join("sweep.json")
        }),
    );
    let result = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(result.status.success(), "{}", stderr_of(&result));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (s_col, b_col, t_col, r_col) = (
        col("strategy"),
        col("b_hat"),
        col("total_s"),
        col("ratio_vs_dpsgd"),
    );
    let mut totals = std::collections::HashMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let band: u64 = f[b_col].parse().unwrap();
        let total: f64 = f[t_col].parse().unwrap();
        totals.insert((f[s_col].to_string(), band), total);
        if f[s_col] == "dp_sgd" {
            assert_eq!(f[r_col], "1", "dp_sgd ratio must be exactly 1");
        }
        assert_ne!(f[s_col], "nmp_gemv", "no CXL rows in this sweep");
    }
    assert!(totals[&("gpu_gemv".into(), 2)] < totals[&("cpu_gemv".into(), 2)]);
    assert!(totals[&("cpu_gemv".into(), 64)] < totals[&("gpu_gemv".into(), 64)]);
}

#[test]
fn simulate_includes_nmp_only_with_cxl_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("nmp.csv");
    let cfg = write_json(
        dir.path(),
        "sim.json",
        serde_json::json!({"out_csv": csv_path}),
    );
    let result = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "sweep=[{\"path\":\"band\",\"values\":[128]}]",
    ]);
    assert!(result.status.success(), "{}", stderr_of(&result));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("nmp_gemv,")), "{csv}");
    assert!(stdout_of(&result).contains("best=nmp_gemv"));
}

fn train_toy_config(dir: &Path, mode: &str, plan_seed: u64) -> serde_json::Value {
    serde_json::json!({
        "plan": {"seed": plan_seed},
        "mixing": {"n": 16, "band": 3, "toeplitz": [1.0, -0.4, 0.15]},
        "trace": {
            "entries": 20, "iterations": 16, "batch_size": 4,
            "pooling": 2, "zipf_alpha": 1.0, "seed": 3
        },
        "dim": 2,
        "threshold": 5,
        "learning_rate": 0.05,
        "noise_coefficient": 0.2,
        "table_seed": 11,
        "mode": mode,
        "out_report": dir.join("report.json")
    })
}

#[test]
fn train_toy_both_modes_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "t.json", train_toy_config(dir.path(), "both", 21));
    let result = run(&["train-toy", "--config", cfg.to_str().unwrap()]);
    assert!(result.status.success(), "{}", stderr_of(&result));
    assert!(stdout_of(&result).contains("eager vs lazy"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    let max_rel = report["diff"]["max_rel"].as_f64().unwrap();
    assert!(max_rel <= 1e-9, "max_rel {max_rel}");
}

#[test]
fn train_toy_eager_needs_no_store() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("final.cnt");
    let mut cfg = train_toy_config(dir.path(), "eager", 22);
    cfg["out_table"] = serde_json::json!(table);
    let cfg = write_json(dir.path(), "t.json", cfg);
    let result = run(&["train-toy", "--config", cfg.to_str().unwrap()]);
    assert!(result.status.success(), "{}", stderr_of(&result));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert!(report["diff"].is_null());
    assert!(report["store"].is_null());
    assert!(table.exists());
}

#[test]
fn train_toy_refuses_a_store_from_another_seed() {
    let dir = tempfile::tempdir().unwrap();
    // Store built from plan seed 40.
    let pre = serde_json::json!({
        "plan": {"seed": 40},
        "mixing": {"n": 16, "band": 3, "toeplitz": [1.0, -0.4, 0.15]},
        "trace": {
            "entries": 20, "iterations": 16, "batch_size": 4,
            "pooling": 2, "zipf_alpha": 1.0, "seed": 3
        },
        "dim": 2,
        "threshold": 5,
        "out_store": dir.path().join("s.cns"),
        "out_stats": dir.path().join("s.stats.json")
    });
    let pre = write_json(dir.path(), "pre.json", pre);
    assert!(run(&["precompute", "--config", pre.to_str().unwrap()]).status.success());
    // Trainer runs with plan seed 41 but the stored noise of seed 40.
    let mut cfg = train_toy_config(dir.path(), "lazy", 41);
    cfg["store"] = serde_json::json!(dir.path().join("s.cns"));
    let cfg = write_json(dir.path(), "t.json", cfg);
    let result = run(&["train-toy", "--config", cfg.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1));
    assert!(stderr_of(&result).contains("provenance"), "{}", stderr_of(&result));
}

#[test]
fn io_failures_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = trace_config(&dir.path().join("missing-dir").join("x").join("t.trace"));
    // pre-create the path as a file so create_dir_all fails
    std::fs::write(dir.path().join("missing-dir"), b"not a dir").unwrap();
    cfg["out"] = serde_json::json!(dir.path().join("missing-dir").join("t.trace"));
    let path = write_json(dir.path(), "io.json", cfg);
    let result = run(&["gen-trace", "--config", path.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(3), "{}", stderr_of(&result));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = trace_config(&dir.path().join("t.trace"));
    cfg["unexpected"] = serde_json::json!(1);
    let path = write_json(dir.path(), "bad.json", cfg);
    let result = run(&["gen-trace", "--config", path.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1));
}

#[test]
fn gen_mixing_writes_a_loadable_document() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.json");
    let cfg = write_json(
        dir.path(),
        "m.json",
        serde_json::json!({"n": 8, "band": 2, "toeplitz": [1.0, -0.5], "out": out}),
    );
    let result = run(&["gen-mixing", "--config", cfg.to_str().unwrap()]);
    assert!(result.status.success(), "{}", stderr_of(&result));
    let text = std::fs::read_to_string(&out).unwrap();
    corrnoise::mixing::load_matrix(&text).unwrap();

    // zero diagonal is refused
    let bad = write_json(
        dir.path(),
        "bad.json",
        serde_json::json!({"n": 8, "band": 2, "toeplitz": [0.0, 1.0], "out": out}),
    );
    let result = run(&["gen-mixing", "--config", bad.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1));
}
