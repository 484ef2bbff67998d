//! End-to-end checks of the `qif` binary: output format, numeric spot
//! values, and the exit-code contract (0 ok, 1 bad input, 2 no convergence).

use std::process::{Command, Output};

fn qif(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qif"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn fit_toy_dataset() {
    let out = qif(&["fit", "--data", &fixture("toy.csv"), "--family", "gaussian", "--basis", "identity"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("x"), "missing coefficient row:\n{text}");
    assert!(text.contains("2.00000"), "expected estimate 2:\n{text}");
    assert!(text.contains("converged = true"), "{text}");
}

#[test]
fn fit_csv_output_round_trips() {
    let out = qif(&[
        "fit", "--data", &fixture("panel.csv"), "--family", "gaussian",
        "--basis", "identity", "--output", "csv",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let row = text
        .lines()
        .find(|l| l.starts_with("x,"))
        .expect("x row present");
    let est: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((est - 0.8).abs() < 0.5, "slope estimate {est} far from truth");
}

#[test]
fn test_pinned_coefficient_on_toy() {
    // with beta pinned to zero: Q(0) = 3 * 2^2 / (14/3) = 18/7
    let out = qif(&[
        "test", "--data", &fixture("toy.csv"), "--family", "gaussian",
        "--basis", "identity", "--pin", "x",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("T_N            = 2.57143"), "{text}");
    assert!(text.contains("df             = 1"), "{text}");
}

#[test]
fn gof_reports_df() {
    let out = qif(&["gof", "--data", &fixture("panel.csv"), "--family", "gaussian"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("df = 2"), "{text}");
}

#[test]
fn power_spot_values() {
    let out = qif(&["power", "--df", "1", "--ncp", "4.122"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "0.528");

    let out = qif(&["power", "--df", "1", "--ncp", "0"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "0.050");
}

#[test]
fn simulate_small_cell_is_reproducible() {
    let args = [
        "simulate", "--family", "gaussian", "--rho", "0.5", "--basis", "ar1",
        "--truth", "h1", "--reps", "50", "--seed", "3", "--output", "csv",
    ];
    let a = qif(&args);
    let b = qif(&args);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "subject,time,y,x\n1,1,0.5,1.0\n1,two,0.3,1.0\n").unwrap();
    let out = qif(&["fit", "--data", path.to_str().unwrap(), "--family", "gaussian"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("3") || err.contains("line"), "stderr should locate the error: {err}");
}

#[test]
fn unknown_covariate_is_an_input_error() {
    let out = qif(&[
        "test", "--data", &fixture("toy.csv"), "--family", "gaussian",
        "--basis", "identity", "--pin", "nope",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn binomial_rejects_non_binary_response() {
    let out = qif(&["fit", "--data", &fixture("panel.csv"), "--family", "binomial"]);
    assert_eq!(out.status.code(), Some(1));
}
