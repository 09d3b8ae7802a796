use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn gridmine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridmine"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(args: &[&str]) -> Output {
    let out = gridmine(args);
    assert_eq!(
        code(&out),
        0,
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn without_timestamp(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timestamp");
    if let Some(cfg) = v.get_mut("config").and_then(Value::as_object_mut) {
        cfg.remove("output");
    }
    v
}

fn schema() -> jsonschema::Validator {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/run-report.schema.json");
    jsonschema::validator_for(&read_json(&root)).expect("schema compiles")
}

fn assert_valid(report: &Value) {
    let validator = schema();
    let errors: Vec<String> = validator
        .iter_errors(report)
        .map(|e| format!("{e} at {}", e.instance_path))
        .collect();
    assert!(errors.is_empty(), "schema errors: {errors:#?}");
}

fn gen_files(dir: &Path, kind: &str, extra: &[&str]) -> Vec<PathBuf> {
    let mut args = vec!["gen", kind, "--out", path_str(dir)];
    args.extend_from_slice(extra);
    ok(&args);
    let mut files: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
}

#[test]
fn gen_writes_one_file_per_site() {
    let tmp = TempDir::new().unwrap();
    let files = gen_files(
        tmp.path(),
        "transactions",
        &["--sites", "4", "--transactions", "800", "--seed", "5"],
    );
    assert_eq!(files.len(), 4);
    for f in &files {
        assert_eq!(
            fs::read_to_string(f).unwrap().lines().count(),
            200,
            "{}",
            f.display()
        );
    }
}

#[test]
fn gen_is_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for kind in ["transactions", "points"] {
        let fa = gen_files(&a.path().join(kind), kind, &["--seed", "11"]);
        let fb = gen_files(&b.path().join(kind), kind, &["--seed", "11"]);
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
    }
}

#[test]
fn preset_round_counts() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("r.json");
    ok(&["mine", "--paper-preset", "--out", path_str(&out)]);
    let report = read_json(&out);
    assert_valid(&report);
    let acc = report["accounting"].as_array().unwrap();
    let rounds = |name: &str| {
        acc.iter().find(|a| a["algorithm"] == name).unwrap()["rounds"]
            .as_u64()
            .unwrap()
    };
    assert_eq!(rounds("gfm"), 2);
    assert_eq!(rounds("fdm"), 4);
    assert_eq!(report["results"]["equivalent"], true);
}

#[test]
fn single_site_matches_centralized() {
    let tmp = TempDir::new().unwrap();
    let files = gen_files(
        &tmp.path().join("data"),
        "transactions",
        &["--sites", "1", "--seed", "2"],
    );
    assert_eq!(files.len(), 1);
    let mut results = Vec::new();
    for algo in ["gfm", "centralized"] {
        let res = tmp.path().join(format!("{algo}.result.json"));
        ok(&[
            "mine",
            "--sites",
            "1",
            "--algo",
            algo,
            "--minsup",
            "0.15",
            "--input",
            path_str(&files[0]),
            "--result",
            path_str(&res),
            "--out",
            path_str(&tmp.path().join(format!("{algo}.json"))),
        ]);
        results.push(read_json(&res)["frequent"].clone());
    }
    assert!(results[0].as_object().is_some_and(|m| !m.is_empty()));
    assert_eq!(results[0], results[1]);
}

#[test]
fn verify_flag_on_generated_data() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("r.json");
    ok(&[
        "mine",
        "--algo",
        "both",
        "--verify",
        "--seed",
        "9",
        "--out",
        path_str(&out),
    ]);
    let report = read_json(&out);
    assert_valid(&report);
    assert_eq!(report["results"]["verified"], true);
    assert_eq!(report["results"]["equivalent"], true);
}

#[test]
fn reports_are_deterministic_modulo_timestamp() {
    let tmp = TempDir::new().unwrap();
    for task in ["mine", "cluster"] {
        let mut reports = Vec::new();
        for run in 0..2 {
            let out = tmp.path().join(format!("{task}-{run}.json"));
            ok(&[task, "--seed", "21", "--out", path_str(&out)]);
            reports.push(without_timestamp(read_json(&out)));
        }
        assert_eq!(reports[0], reports[1], "{task}");
    }
}

#[test]
fn stdout_report_without_out() {
    let out = ok(&["mine", "--paper-preset", "--algo", "gfm"]);
    let report: Value = serde_json::from_slice(&out.stdout).expect("stdout is JSON");
    assert_valid(&report);
    assert_eq!(report["schema_version"], 1);
}

#[test]
fn cluster_report() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("c.json");
    let log = tmp.path().join("log.csv");
    ok(&[
        "cluster",
        "--seed",
        "4",
        "--ki",
        "8",
        "--out",
        path_str(&out),
        "--dump-log",
        path_str(&log),
    ]);
    let report = read_json(&out);
    assert_valid(&report);
    let res = &report["results"];
    assert_eq!(res["k_global"], 4);
    assert_eq!(res["sub_clusters"], 32);
    // four sites, eight sub-clusters each, two dimensions
    assert_eq!(res["payload_bytes"].as_u64().unwrap(), 4 * 8 * ((2 + 2) * 8 + 8));
    assert_eq!(
        res["estimated_seconds"],
        report["accounting"][0]["makespan_seconds"]
    );
    assert!(fs::read_to_string(&log).unwrap().lines().count() > 1);
}

#[test]
fn cluster_from_point_files() {
    let tmp = TempDir::new().unwrap();
    let files = gen_files(&tmp.path().join("data"), "points", &["--seed", "8"]);
    let mut args = vec!["cluster", "--sites", "4", "--input"];
    args.extend(files.iter().map(|f| path_str(f)));
    let out = ok(&args);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_valid(&report);
    assert_eq!(report["results"]["k_global"], 4);
}

#[test]
fn too_many_sub_clusters_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let files = gen_files(&tmp.path().join("data"), "points", &["--seed", "8"]);
    let mut args = vec!["cluster", "--sites", "4", "--ki", "100000", "--input"];
    args.extend(files.iter().map(|f| path_str(f)));
    let out = gridmine(&args);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validation_errors_exit_2() {
    assert_eq!(code(&gridmine(&["mine", "--minsup", "1.5"])), 2);
    assert_eq!(code(&gridmine(&["mine", "--minsup", "0"])), 2);
    assert_eq!(code(&gridmine(&["mine", "--k", "0"])), 2);
    assert_eq!(code(&gridmine(&["mine", "--sites", "0"])), 2);
    assert_eq!(code(&gridmine(&["cluster", "--ki", "0"])), 2);
    assert_eq!(
        code(&gridmine(&[
            "estimate",
            "--measured",
            "10min",
            "--estimated",
            "600s"
        ])),
        2
    );
    assert_eq!(
        code(&gridmine(&["estimate", "--measured", "ten", "--estimated", "6s"])),
        2
    );
}

#[test]
fn invalid_config_exits_2() {
    let tmp = TempDir::new().unwrap();
    let bad_json = tmp.path().join("bad.json");
    fs::write(&bad_json, "{ not json").unwrap();
    assert_eq!(code(&gridmine(&["mine", "--config", path_str(&bad_json)])), 2);

    let bad_value = tmp.path().join("bad-value.json");
    fs::write(
        &bad_value,
        r#"{"task": "mine", "n_sites": 4, "mining": {"minsup": -1.0, "k": 3}}"#,
    )
    .unwrap();
    assert_eq!(code(&gridmine(&["mine", "--config", path_str(&bad_value)])), 2);
}

#[test]
fn malformed_input_file_exits_2() {
    let tmp = TempDir::new().unwrap();
    let f = tmp.path().join("site-0.txt");
    fs::write(&f, "1 2 3\n4 x 5\n").unwrap();
    let out = gridmine(&["mine", "--sites", "1", "--input", path_str(&f)]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn io_errors_exit_4() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.txt");
    let out = gridmine(&["mine", "--sites", "1", "--input", path_str(&missing)]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));

    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let unwritable = blocker.join("report.json");
    assert_eq!(
        code(&gridmine(&[
            "mine",
            "--paper-preset",
            "--out",
            path_str(&unwritable)
        ])),
        4
    );
}

#[test]
fn estimate_preset() {
    let out = ok(&["estimate", "--paper-preset"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let pct: Vec<f64> = v["reports"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["overhead_pct_rounded"].as_f64().unwrap())
        .collect();
    assert_eq!(pct, vec![98.1, 18.6, 24.6]);
    let gains: Vec<f64> = v["gains"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| g["gain_pct_rounded"].as_f64().unwrap())
        .collect();
    assert_eq!(gains, vec![24.2, 18.1]);
}

#[test]
fn estimate_above_measurement_is_flagged_not_fatal() {
    let out = ok(&["estimate", "--measured", "100s", "--estimated", "150s"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let r = &v["reports"][0];
    assert_eq!(r["estimator_exceeds_measurement"], true);
    assert_eq!(r["overhead_pct_rounded"].as_f64().unwrap(), -50.0);
}

#[test]
fn report_pretty_prints() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("r.json");
    ok(&["mine", "--paper-preset", "--out", path_str(&out)]);
    let printed = ok(&["report", path_str(&out)]);
    let text = String::from_utf8(printed.stdout).unwrap();
    assert!(text.contains("gfm"), "{text}");
    assert!(text.contains("fdm"), "{text}");

    let junk = tmp.path().join("junk.json");
    fs::write(&junk, "[]").unwrap();
    assert_eq!(code(&gridmine(&["report", path_str(&junk)])), 2);
}

#[test]
fn measured_time_adds_overhead() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("r.json");
    ok(&[
        "mine",
        "--paper-preset",
        "--algo",
        "gfm",
        "--measured",
        "2s",
        "--out",
        path_str(&out),
    ]);
    let report = read_json(&out);
    assert_valid(&report);
    let o = &report["overhead"];
    assert_eq!(o["measured"]["unit"], "seconds");
    assert_eq!(o["estimator_exceeds_measurement"], false);
}

#[test]
fn dump_log_names_per_algorithm() {
    let tmp = TempDir::new().unwrap();
    let log = tmp.path().join("log.csv");
    ok(&[
        "mine",
        "--paper-preset",
        "--dump-log",
        path_str(&log),
        "--out",
        path_str(&tmp.path().join("r.json")),
    ]);
    for algo in ["gfm", "fdm"] {
        let f = tmp.path().join(format!("log.{algo}.csv"));
        assert!(f.exists(), "{}", f.display());
    }
}
