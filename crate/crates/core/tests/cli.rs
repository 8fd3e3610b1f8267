use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::{json, Value};

const EXP_LINEAR: &str = r#"{"q":4,"terms":[{"kind":"exp_linear","indices":[1,2,3,4],
    "beta":[-0.5,0.1,0.8,-0.2],"offset":-1}]}"#;
const BILINEAR: &str = r#"{"q":4,"terms":[{"kind":"bilinear","indices":[1,2,3,4],
    "A":[[1,2,0,-1],[0.5,0,3,0],[0,-2,1,1],[4,0,0,2]]}]}"#;
const LINEAR: &str = r#"{"q":5,"terms":[{"kind":"linear","indices":[1,2,3,4,5],
    "beta":[1.5,-2,0.25,3,-0.5]}]}"#;

fn pairshap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pairshap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn floats(v: &Value) -> Vec<f64> {
    serde_json::from_value(v.clone()).unwrap()
}

#[test]
fn exact_all_methods_agree() {
    let dir = tempfile::tempdir().unwrap();
    let vf = write(dir.path(), "vf.json", EXP_LINEAR);
    let out = stdout_json(&pairshap(&["exact", "--vf", vf.to_str().unwrap()]));
    assert_eq!(out["results"].as_array().unwrap().len(), 3);
    assert!(out["max_discrepancy"].as_f64().unwrap() <= 1e-9);
    let phi = floats(&out["results"][0]["phi"]);
    let total: f64 = phi.iter().sum();
    assert!((total - (0.2f64.exp() - 1.0)).abs() < 1e-12);
}

#[test]
fn exact_tsv_has_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let vf = write(dir.path(), "vf.json", EXP_LINEAR);
    let out = pairshap(&[
        "exact",
        "--vf",
        vf.to_str().unwrap(),
        "--method",
        "subset",
        "--tsv",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method\tphi_1\tphi_2\tphi_3\tphi_4");
    assert!(lines[1].starts_with("subset\t"));
    assert_eq!(lines.len(), 2);
}

#[test]
fn zero_game_gives_zero_vector() {
    let dir = tempfile::tempdir().unwrap();
    let vf = write(dir.path(), "vf.json", r#"{"q":3,"terms":[]}"#);
    let out = stdout_json(&pairshap(&["exact", "--vf", vf.to_str().unwrap()]));
    for r in out["results"].as_array().unwrap() {
        assert_eq!(floats(&r["phi"]), vec![0.0; 3]);
    }
}

#[test]
fn size_guard_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let vf = write(dir.path(), "vf.json", r#"{"q":26,"terms":[]}"#);
    let out = pairshap(&["exact", "--vf", vf.to_str().unwrap(), "--method", "subset"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("SizeGuard"));
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"q":2,"terms":[{"kind":"cubic","indices":[1]}]}"#,
    );
    let out = pairshap(&["exact", "--vf", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SchemaError"));

    let out = pairshap(&["exact", "--vf", "/nonexistent/vf.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("IoError") && err.contains("/nonexistent/vf.json"));

    // missing --seed on a randomized command
    let vf = write(dir.path(), "vf.json", EXP_LINEAR);
    let out = pairshap(&[
        "sample",
        "--vf",
        vf.to_str().unwrap(),
        "--method",
        "kernel",
        "--n",
        "8",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rank_deficiency_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let vf = write(dir.path(), "vf.json", EXP_LINEAR);
    let out = pairshap(&[
        "sample",
        "--vf",
        vf.to_str().unwrap(),
        "--method",
        "kernel",
        "--n",
        "1",
        "--seed",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("RankDeficient"));
}

#[test]
fn sample_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let vf = write(dir.path(), "vf.json", EXP_LINEAR);
    let args = [
        "sample",
        "--vf",
        vf.to_str().unwrap(),
        "--method",
        "kernel",
        "--paired",
        "--n",
        "4096",
        "--seed",
        "42",
    ];
    let a = pairshap(&args);
    let b = pairshap(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let out = stdout_json(&a);
    assert_eq!(out["evaluations"], json!(2 * 4096 + 1));
    let c = pairshap(&[
        "sample",
        "--vf",
        vf.to_str().unwrap(),
        "--method",
        "kernel",
        "--paired",
        "--n",
        "4096",
        "--seed",
        "43",
    ]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn bilinear_permutation_pair_is_exact_with_zero_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let vf = write(dir.path(), "vf.json", BILINEAR);
    let exact = stdout_json(&pairshap(&[
        "exact",
        "--vf",
        vf.to_str().unwrap(),
        "--method",
        "subset",
    ]));
    let phi = floats(&exact["results"][0]["phi"]);
    let out = stdout_json(&pairshap(&[
        "sample",
        "--vf",
        vf.to_str().unwrap(),
        "--method",
        "permutation",
        "--paired",
        "--n",
        "1",
        "--seed",
        "3",
    ]));
    for (a, b) in floats(&out["phi"]).iter().zip(&phi) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(floats(&out["stderr"]), vec![0.0; 4]);
}

#[test]
fn linear_kernel_sample_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let vf = write(dir.path(), "vf.json", LINEAR);
    let out = stdout_json(&pairshap(&[
        "sample",
        "--vf",
        vf.to_str().unwrap(),
        "--method",
        "kernel",
        "--n",
        "12",
        "--seed",
        "5",
    ]));
    let beta = [1.5, -2.0, 0.25, 3.0, -0.5];
    for (a, b) in floats(&out["phi"]).iter().zip(beta) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn asymptotics_traces_and_degenerate_note() {
    let dir = tempfile::tempdir().unwrap();
    let vf = write(dir.path(), "vf.json", EXP_LINEAR);
    let k = stdout_json(&pairshap(&[
        "asymptotics",
        "--vf",
        vf.to_str().unwrap(),
        "--method",
        "kernel-paired",
        "--exact",
    ]));
    assert!((k["trace"].as_f64().unwrap() - 0.0015045473).abs() < 1e-9);
    let p = stdout_json(&pairshap(&[
        "asymptotics",
        "--vf",
        vf.to_str().unwrap(),
        "--method",
        "permutation-paired",
        "--adjusted",
    ]));
    assert_eq!((p["trace"].as_f64().unwrap() * 1e5).round(), 165.0);
    assert_eq!(p["adjustment_factor"], json!(8));

    let bl = write(dir.path(), "bl.json", BILINEAR);
    let z = stdout_json(&pairshap(&[
        "asymptotics",
        "--vf",
        bl.to_str().unwrap(),
        "--method",
        "permutation-paired",
    ]));
    for row in z["matrix"].as_array().unwrap() {
        assert!(floats(row).iter().all(|&x| x == 0.0));
    }
    assert!(z["notes"].to_string().contains("BilinearDegenerate"));
}

#[test]
fn plugin_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let vf = write(dir.path(), "vf.json", EXP_LINEAR);
    let out = pairshap(&[
        "asymptotics",
        "--vf",
        vf.to_str().unwrap(),
        "--method",
        "kernel",
        "--plugin",
        "100",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn three_block_vf(dir: &Path) -> PathBuf {
    let spec = pairshap::presets::three_block();
    write(dir, "blocks.json", &spec.to_json_value().to_string())
}

#[test]
fn blocks_exact_and_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let vf = three_block_vf(dir.path());
    let vf = vf.to_str().unwrap();
    let out = stdout_json(&pairshap(&["blocks", "--vf", vf, "--threshold", "1e-8"]));
    assert_eq!(out["groups"], json!([[1, 2, 3], [4, 5, 6], [7, 8, 9]]));
    let out = stdout_json(&pairshap(&["blocks", "--vf", vf, "--threshold", "1e9"]));
    assert_eq!(out["groups"].as_array().unwrap().len(), 9);
    let out = stdout_json(&pairshap(&[
        "blocks",
        "--vf",
        vf,
        "--threshold",
        "0.05",
        "--correlation",
        "--plugin",
        "20000",
        "--seed",
        "1",
    ]));
    assert_eq!(out["groups"], json!([[1, 2, 3], [4, 5, 6], [7, 8, 9]]));

    let dense = write(dir.path(), "dense.json", EXP_LINEAR);
    let out = stdout_json(&pairshap(&[
        "blocks",
        "--vf",
        dense.to_str().unwrap(),
        "--threshold",
        "1e-8",
    ]));
    assert_eq!(out["groups"], json!([[1, 2, 3, 4]]));
}

#[test]
fn bilinear_test_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let bl = write(dir.path(), "bl.json", BILINEAR);
    let out = stdout_json(&pairshap(&[
        "bilinear-test",
        "--vf",
        bl.to_str().unwrap(),
        "--seed",
        "1",
    ]));
    assert_eq!(out["verdict"], "bilinear-consistent");
    let ex = write(dir.path(), "ex.json", EXP_LINEAR);
    let out = stdout_json(&pairshap(&[
        "bilinear-test",
        "--vf",
        ex.to_str().unwrap(),
        "--seed",
        "1",
    ]));
    assert_eq!(out["verdict"], "not-bilinear");
}

#[test]
fn experiment_smoke_and_jobs_invariance() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "vf.json", EXP_LINEAR);
    let config = write(
        dir.path(),
        "config.json",
        r#"{"vf":"vf.json","methods":["kernel-paired","permutation-paired"],"sizes":[256],
            "reps":10,"master_seed":3,"outputs":{"csv":"out.csv"}}"#,
    );
    let config = config.to_str().unwrap();
    let start = Instant::now();
    let out = stdout_json(&pairshap(&["experiment", "--config", config]));
    assert!(start.elapsed().as_secs_f64() < 5.0);
    assert_eq!(out["rows"], json!(8));
    let csv = fs::read_to_string(dir.path().join("out.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,n,j,bias,sigma_hat,tau,evals_per_sample");
    assert_eq!(lines.len(), 1 + 8);
    assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 7));

    let again = pairshap(&["--jobs", "3", "experiment", "--config", config]);
    assert!(again.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("out.csv")).unwrap(), csv);
}

#[test]
fn experiment_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "config.json",
        r#"{"vf":{"q":2,"terms":[]},"methods":["kernel"],"sizes":[8],"reps":1,
            "master_seed":1,"outputs":{"csv":"out.csv"},"extra":true}"#,
    );
    let out = pairshap(&["experiment", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SchemaError"));
}
