use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn tubal(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tubal"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = tubal(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn simulate(cwd: &Path, out: &str) {
    ok(
        cwd,
        &[
            "simulate", "--d1", "20", "--d2", "20", "--d3", "10", "--rank", "2", "--sigma", "0.3", "--frac", "0.4",
            "--seed", "7", "--out", out,
        ],
    );
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("# schema_version=1\n"), "{}", path.display());
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    r.records()
        .map(|rec| header.iter().cloned().zip(rec.unwrap().iter().map(String::from)).collect())
        .collect()
}

#[test]
fn simulate_writes_tensor_and_observations() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "sim");
    let f = files(&dir.path().join("sim"));
    assert_eq!(&f["truth.tns3"][..4], b"TNS3");
    assert_eq!(f["truth.tns3"].len(), 20 + 8 * 20 * 20 * 10);
    let obs = String::from_utf8(f["observations.jsonl"].clone()).unwrap();
    assert_eq!(obs.lines().count(), 1 + 1600);
    assert!(f.contains_key("generator.json"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "a");
    simulate(dir.path(), "b");
    assert_eq!(files(&dir.path().join("a")), files(&dir.path().join("b")));
    for out in ["ia", "ib"] {
        ok(
            dir.path(),
            &["infer", "--obs", "a/observations.jsonl", "--rank", "2", "--mask", "1,1,1:1.0", "--out", out],
        );
    }
    assert_eq!(files(&dir.path().join("ia")), files(&dir.path().join("ib")));
}

#[test]
fn infer_reports_symmetric_intervals() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "sim");
    ok(
        dir.path(),
        &[
            "infer", "--tensor", "sim/truth.tns3", "--obs", "sim/observations.jsonl", "--rank", "2", "--mask",
            "1,1,1:1.0", "--alpha", "0.05", "--out", "inf",
        ],
    );
    let text = std::fs::read_to_string(dir.path().join("inf/report.json")).unwrap();
    let reports: serde_json::Value = serde_json::from_str(&text).unwrap();
    let r = &reports[0];
    let est = r["estimate"].as_f64().unwrap();
    let (lo, hi) = (r["ci_low"].as_f64().unwrap(), r["ci_high"].as_f64().unwrap());
    assert!(lo < est && est < hi);
    assert!(((est - lo) - (hi - est)).abs() < 1e-9);
    assert!(r["ci_obs_low"].as_f64().unwrap() < lo);
    assert!((r["z"].as_f64().unwrap() - 1.959964).abs() < 1e-6);
    assert!(r["truth"]["oracle_s_m"].as_f64().unwrap() > 0.0);

    let masks = r#"[{"name": "pair", "entries": [{"j": 1, "k": 1, "l": 1}, {"j": 5, "k": 5, "l": 1, "w": 2.0}]}]"#;
    std::fs::write(dir.path().join("masks.json"), masks).unwrap();
    ok(
        dir.path(),
        &[
            "infer", "--obs", "sim/observations.jsonl", "--rank", "2", "--mask-file", "masks.json", "--format",
            "csv", "--out", "csv",
        ],
    );
    let rows = csv_rows(&dir.path().join("csv/report.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["mask"], "pair");
}

#[test]
fn mc_tables_satisfy_the_mse_identity() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{"dims": [12, 12, 6], "rank": 2, "sigma": 0.3, "fraction": 0.6,
                   "replicates": 4, "seed": 3, "gain_locations": 50}"#;
    std::fs::write(dir.path().join("spec.json"), spec).unwrap();
    ok(dir.path(), &["mc", "--spec", "spec.json", "--out", "mc", "--threads", "1"]);
    let t1 = csv_rows(&dir.path().join("mc/table1.csv"));
    let mut checked = 0;
    for row in t1.iter().filter(|r| r["mask"] != "tensor_rmse") {
        let f = |k: &str| row[k].parse::<f64>().unwrap();
        assert!((f("mse") - (f("bias").powi(2) + f("sd").powi(2))).abs() <= 1e-9 * f("mse").max(1.0), "{row:?}");
        checked += 1;
    }
    assert_eq!(checked, 4 * 7);
    let t2 = csv_rows(&dir.path().join("mc/table2.csv"));
    assert_eq!(t2.len(), 8);
    for row in &t2 {
        let p: f64 = row["coverage"].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
    assert!(dir.path().join("mc/summary.json").exists());
    assert!(dir.path().join("mc/gains.csv").exists());
}

#[test]
fn complete_diagnose_grid_and_perturb_run() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "sim");
    ok(
        dir.path(),
        &["complete", "--obs", "sim/observations.jsonl", "--rank", "2", "--trace", "--out", "fit"],
    );
    let f = files(&dir.path().join("fit"));
    for name in ["estimate.tns3", "factors_1_U.tns3", "factors_2.json", "trace.csv", "complete.json"] {
        assert!(f.contains_key(name), "{name}");
    }
    ok(
        dir.path(),
        &[
            "diagnose", "--tensor", "fit/estimate.tns3", "--rank", "2", "--reference", "sim/truth.tns3", "--mask",
            "1,1,1", "--sigma", "0.3", "--format", "csv", "--out", "diag",
        ],
    );
    let rows = csv_rows(&dir.path().join("diag/diagnostics.csv"));
    assert!(rows[0]["row_dist_u"].parse::<f64>().unwrap() <= 2.0);
    ok(
        dir.path(),
        &["grid", "--input", "sim/truth.tns3", "--missing", "0.5", "--rank", "2", "--out", "grid"],
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("grid/summary.json")).unwrap()).unwrap();
    assert!(summary["width_min"].as_f64().unwrap() >= 0.0);
    ok(
        dir.path(),
        &[
            "perturb", "--d1", "10", "--d2", "10", "--d3", "4", "--rank", "2", "--sigma", "0.1", "--reps", "3",
            "--fractions", "0.5,1.0", "--out", "pert",
        ],
    );
    assert_eq!(csv_rows(&dir.path().join("pert/perturb.csv")).len(), 2);
}

#[test]
fn outputs_stay_under_out() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "only");
    let entries: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(entries, ["only"]);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| tubal(dir.path(), args).status.code().unwrap();
    assert_eq!(code(&["simulate", "--d1", "4", "--d2", "4", "--d3", "2", "--bogus"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["simulate", "--d1", "4", "--d2", "4", "--d3", "2", "--rank", "9"]), 2);
    assert_eq!(code(&["infer", "--obs", "missing.jsonl", "--rank", "1", "--mask", "1,1,1"]), 2);
    std::fs::write(dir.path().join("bad.jsonl"), "{\"dims\": [2, 2, 2]}\n").unwrap();
    assert_eq!(code(&["complete", "--obs", "bad.jsonl", "--rank", "1", "--out", "x"]), 1);
    simulate(dir.path(), "sim");
    assert_eq!(
        code(&["infer", "--obs", "sim/observations.jsonl", "--rank", "2", "--mask", "1,1,1", "--alpha", "1.5"]),
        2
    );
    assert_eq!(code(&["infer", "--obs", "sim/observations.jsonl", "--rank", "2", "--mask", "99,1,1"]), 2);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn help_documents_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = tubal(dir.path(), &["mc", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in ["--spec", "--reps", "--sigma", "--frac", "--seed", "--out", "--threads", "--format"] {
        assert!(text.contains(flag), "{flag}");
    }
    assert!(text.contains("[default: 300]"));
    let top = String::from_utf8(tubal(dir.path(), &["--help"]).stdout).unwrap();
    for cmd in ["simulate", "complete", "infer", "mc", "diagnose", "grid", "perturb"] {
        assert!(top.contains(cmd), "{cmd}");
    }
}
