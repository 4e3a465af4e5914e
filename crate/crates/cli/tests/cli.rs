use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flatzeta")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

#[test]
fn classify_prints_exact_rationals() {
    let out = run(&["classify", "--family", "f1", "-a", "2", "-b", "4", "-p", "1", "-q", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["case"], "C");
    assert_eq!(v["h0"], "1/4");
    assert_eq!(v["m0_bound"], "1/2");
    assert_eq!(v["nonpolar"], false);
}

#[test]
fn constants_match_their_oracles() {
    let out = run(&["constants", "-a", "2", "-b", "4", "-p", "1", "-q", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = json(&out);
    let rows = rows.as_array().unwrap();
    assert!(rows.iter().any(|r| r["name"] == "C"));
    for r in rows {
        assert!(r["rel_delta"].as_f64().unwrap() < 1e-10, "{r}");
    }
}

#[test]
fn verify_writes_a_passing_report() {
    let out = run(&["verify", "thm33", "-p", "1", "--ptilde", "1", "--qtilde", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["passed"], true);
    assert_eq!(v["target"], "thm33");
    let g = v["fitted"]["exponent"].as_f64().unwrap();
    assert!((g - 0.5).abs() < 0.05);
    assert!(!v["samples"].as_array().unwrap().is_empty());
}

#[test]
fn verify_csv_has_sample_columns() {
    let out = run(&["verify", "thm33", "-p", "1", "--ptilde", "1", "--qtilde", "2", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("sigma,X,raw,scaled"));
    assert_eq!(text.lines().count(), 15);
}

#[test]
fn verify_to_file() {
    let path = std::env::temp_dir().join(format!("flatzeta-report-{}.json", std::process::id()));
    let out = run(&["verify", "thm31", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    std::fs::remove_file(path).unwrap();
}

#[test]
fn failed_verification_exits_one() {
    let out = run(&["verify", "thm33", "-p", "1", "--ptilde", "1", "--qtilde", "2", "--tol", "1e-9"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["passed"], false);
}

#[test]
fn invalid_parameters_exit_two() {
    assert_eq!(run(&["classify", "-a", "0"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "thm31", "--grid-count", "3"]).status.code(), Some(2));
    assert_eq!(run(&["classify", "--family", "f3"]).status.code(), Some(2));
}

#[test]
fn zeta_direct_engine() {
    let out = run(&["zeta", "--sigma", "-0.1,-0.2", "--engine", "direct"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["converged"] == true));
}
