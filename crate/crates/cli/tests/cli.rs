//! End-to-end CLI tests: exit codes, config handling, reproducibility and
//! schema validation of emitted reports.

use std::process::Command;

fn folab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_folab"))
}

fn schema_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../schemas")
        .canonicalize()
        .expect("schemas directory")
}

fn validate(report: &str, schema_file: &str) {
    let value: serde_json::Value = serde_json::from_str(report).expect("report is JSON");
    let schema_text =
        std::fs::read_to_string(schema_dir().join(schema_file)).expect("schema file");
    let schema: serde_json::Value = serde_json::from_str(&schema_text).unwrap();
    if let Some(err) = foliation_lab::report::validate_schema(&schema, &value) {
        panic!("{schema_file}: {err}\nreport: {report}");
    }
}

/// Strip the wall-time and build fields that legitimately differ between
/// runs.
fn normalize(report: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(report).unwrap();
    if let Some(meta) = v.get_mut("meta") {
        meta["wall_ms"] = 0.into();
        meta["workers"] = 0.into();
    }
    v
}

#[test]
fn constants_table_and_report() {
    let out = folab().args(["constants", "--degree", "2"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("lyapunov         | -4"));
    assert!(text.contains("brunella_bound   | 1/4"));
    assert!(text.contains("jouanolou_dim    | 1/4"));
    let json_start = text.find('{').unwrap();
    validate(&text[json_start..], "constants.schema.json");
}

#[test]
fn constants_rejects_degree_one() {
    let out = folab().args(["constants", "--degree", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "degree 1 is a numerical-domain error");
}

#[test]
fn singularities_report_validates() {
    let out = folab()
        .args(["singularities", "--system", "jouanolou:2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let json_start = text.find('{').unwrap();
    let report = &text[json_start..];
    validate(report, "singularities.schema.json");
    let v: serde_json::Value = serde_json::from_str(report).unwrap();
    assert_eq!(v["result"]["count"], 7);
}

#[test]
fn missing_seed_is_a_config_error() {
    let out = folab()
        .args(["entropy-plane", "--t", "2", "--n", "100"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = std::env::temp_dir().join("folab_cli_test_cfg");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.cfg");
    std::fs::write(&path, "seed = 5\nbogus = 1\n").unwrap();
    let out = folab()
        .args(["--config", path.to_str().unwrap(), "constants", "--degree", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_supplies_values_and_flags_override() {
    let dir = std::env::temp_dir().join("folab_cli_test_cfg2");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("run.cfg");
    std::fs::write(&path, "seed = 5\nn = 500\nt = 1.5\n").unwrap();
    let out = folab()
        .args([
            "--config",
            path.to_str().unwrap(),
            "--print-config",
            "--t",
            "2.5",
            "dynkin",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("command = dynkin"));
    assert!(text.contains("seed = 5"));
    assert!(text.contains("n = 500"));
    assert!(text.contains("t = 2.5"), "flag must override the file value");
}

#[test]
fn reports_are_byte_identical_across_reruns_and_worker_counts() {
    let run = |workers: &str| {
        let out = folab()
            .args([
                "hr-check", "--tau", "poisson", "--t", "1", "--n", "2000", "--seed", "42",
                "--workers", workers,
            ])
            .output()
            .unwrap();
        assert!(out.status.success());
        normalize(&String::from_utf8_lossy(&out.stdout))
    };
    let a = run("1");
    let b = run("4");
    assert_eq!(a, b, "reports must not depend on the worker count");
    let c2 = run("1");
    assert_eq!(a, c2, "rerun must be identical");
}

#[test]
fn stochastic_reports_validate_against_schemas() {
    let cases = [
        (
            vec!["entropy-plane", "--t", "4", "--n", "3000", "--seed", "7"],
            "entropy_plane.schema.json",
        ),
        (
            vec![
                "entropy-leaf", "--horizons", "2,4,6", "--n", "6000", "--seed", "7",
            ],
            "entropy_leaf.schema.json",
        ),
        (
            vec!["hd-synthetic", "--tau", "poisson", "--t", "1", "--n", "4000", "--seed", "7"],
            "hd_synthetic.schema.json",
        ),
        (
            vec!["hr-check", "--tau", "mixture", "--t", "1", "--n", "2000", "--seed", "7"],
            "hr_check.schema.json",
        ),
        (
            vec!["dimension", "--source", "cantor", "--n", "100000", "--seed", "7"],
            "dimension_fit.schema.json",
        ),
        (
            vec!["decay-check", "--ratio", "0.25", "--n", "60000", "--seed", "7"],
            "decay_check.schema.json",
        ),
        (
            vec!["dynkin", "--t", "2", "--n", "3000", "--seed", "7"],
            "dynkin.schema.json",
        ),
        (
            vec![
                "local-model", "--system", "linear:1,1+1i", "--samples", "60", "--seed", "7",
            ],
            "local_model.schema.json",
        ),
    ];
    for (args, schema) in cases {
        let out = folab().args(&args).output().unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        validate(&String::from_utf8_lossy(&out.stdout), schema);
    }
}

#[test]
fn entropy_plane_emits_csv_trace() {
    let dir = std::env::temp_dir().join("folab_cli_trace");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("trace.csv");
    let out = folab()
        .args([
            "entropy-plane", "--t", "1", "--n", "200", "--seed", "3",
            "--trace-csv", path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = std::fs::read_to_string(&path).unwrap();
    assert!(csv.starts_with("time,re,im\n"));
    assert!(csv.lines().count() > 10);
}

#[test]
fn out_flag_writes_the_report_to_a_file() {
    let dir = std::env::temp_dir().join("folab_cli_out");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("report.json");
    let out = folab()
        .args([
            "dynkin", "--t", "1", "--n", "500", "--seed", "9",
            "--out", path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let report = std::fs::read_to_string(&path).unwrap();
    validate(&report, "dynkin.schema.json");
}
