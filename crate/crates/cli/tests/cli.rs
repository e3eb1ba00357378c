use std::fs;
use std::process::Command;

const SPEC: &str = r#"
precoders = ["conjbf", "tpe-finite:2", "mmse"]
snr_db = [0.0, 20.0]
trials = 6
seed = 7
sampling = "exact-toeplitz"

[scenario]
name = "tiny"
m = 16
k = 3
association = [[0], [0], [1]]

[[scenario.clusters]]
center_deg = -20.0
spread_deg = 20.0

[[scenario.clusters]]
center_deg = 25.0
spread_deg = 15.0

[power]
policy = "uniform"
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tpemimo"))
}

#[test]
fn run_spec_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("tiny.toml");
    fs::write(&spec, SPEC).unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&out)
        .args(["--workers", "2"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let stdout = String::from_utf8(status.stdout).unwrap();
    assert!(stdout.contains("tpe-finite:2"));

    let rates = fs::read_to_string(out.join("rates.csv")).unwrap();
    assert!(rates.starts_with("precoder,snr_db,user,rate_mean,rate_stderr"));
    // 3 precoders × 2 SNRs × 3 users
    assert_eq!(rates.lines().count(), 1 + 18);
    assert!(out.join("results.json").is_file());
    assert!(out.join("cdf").join("tpe-finite-2_20dB.dat").is_file());
}

#[test]
fn run_is_reproducible_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("tiny.toml");
    fs::write(&spec, SPEC).unwrap();
    let mut csv = Vec::new();
    for w in ["1", "3"] {
        let out = dir.path().join(format!("w{w}"));
        let st = bin().args(["run", "--format", "csv", "--workers", w, "--spec"]).arg(&spec).arg("--out").arg(&out).output().unwrap();
        assert!(st.status.success());
        assert!(!out.join("results.json").exists());
        csv.push(fs::read_to_string(out.join("sum_rates.csv")).unwrap());
    }
    assert_eq!(csv[0], csv[1]);
}

#[test]
fn failed_cell_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.toml");
    fs::write(&spec, SPEC.replace("\"mmse\"", "\"tpe:9\"")).unwrap();
    let res = bin().args(["run", "--spec"]).arg(&spec).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("tpe:9"));
}

#[test]
fn bad_input_is_reported() {
    let res = bin().args(["run", "--scenario", "nope"]).output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("nope"));

    let res = bin().args(["run", "--spec", "/nonexistent/x.toml"]).output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("/nonexistent/x.toml"));
}

#[test]
fn latency_defaults() {
    let res = bin().arg("latency").output().unwrap();
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.contains("TPE 128 cycles"), "{text}");
    assert!(text.contains("RZF 744 cycles"), "{text}");
}

#[test]
fn latency_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let st = bin().args(["latency", "--sweep", "--out"]).arg(&path).status().unwrap();
    assert!(st.success());
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.lines().count() > 8);
}

#[test]
fn iid_moments_first_order() {
    // Constant profile, load 1/2: gamma_1 = beta, rho_1 = 1 + beta.
    let res = bin().args(["moments", "--iid-beta", "0.5", "--m", "40", "--order", "2"]).output().unwrap();
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    let row: Vec<f64> = text
        .lines()
        .find(|l| l.starts_with("0,1,"))
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    assert!((row[2] - 0.5).abs() < 1e-12);
    assert!((row[3] - 1.5).abs() < 1e-12);
}

#[test]
fn scenario_moments() {
    let res = bin().args(["moments", "--scenario", "single-cluster", "--order", "3"]).output().unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = String::from_utf8(res.stdout).unwrap();
    // header plus 16 users × orders 0..=3
    assert_eq!(text.lines().count(), 1 + 16 * 4);
}
