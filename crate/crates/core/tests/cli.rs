use std::process::{Command, Output};

fn jexplore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jexplore")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn space_info_prints_cardinality() {
    let o = jexplore(&["space", "info"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("cardinality 107311600"), "{text}");
    assert!(text.contains("emc_freq_khz"));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(jexplore(&["--help"]).status.code(), Some(0));
    let v = jexplore(&["--version"]);
    assert_eq!(v.status.code(), Some(0));
    assert!(stdout(&v).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(jexplore(&[]).status.code(), Some(1));
    assert_eq!(jexplore(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(jexplore(&["host", "--budget", "5", "--out", "x.csv"]).status.code(), Some(1));
    assert_eq!(
        jexplore(&["sim", "--samples", "5", "--out", "x.csv", "--deterministic", "--realtime"]).status.code(),
        Some(1)
    );
    assert_eq!(
        jexplore(&["client", "--listen", "127.0.0.1:0", "--id", "a", "--deterministic", "--realtime"]).status.code(),
        Some(1)
    );
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(jexplore(&["analyze", "--in", missing.to_str().unwrap()]).status.code(), Some(2));
    let out = dir.path().join("o.csv");
    let o = jexplore(&["sim", "--samples", "3", "--preset", "nope", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
    let host = jexplore(&["host", "--client", "127.0.0.1:1", "--budget", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(host.status.code(), Some(2));
}

#[test]
fn sim_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("run.csv");
    let report = dir.path().join("report.json");
    let svg = dir.path().join("front.svg");
    let o = jexplore(&["sim", "--samples", "200", "--seed", "42", "--deterministic", "--out", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let o = jexplore(&[
        "analyze",
        "--in",
        csv.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["n_samples"], 200);
    assert_eq!(json["emc_cutoff"]["separated"], true);
    assert!(json["spearman_rho"].as_f64().unwrap() <= -0.4);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let printed = jexplore(&["analyze", "--in", csv.to_str().unwrap()]);
    assert_eq!(printed.status.code(), Some(0));
    let again: serde_json::Value = serde_json::from_slice(&printed.stdout).unwrap();
    assert_eq!(again, json);
}

#[test]
fn space_sample_matches_library() {
    let o = jexplore(&["space", "sample", "--seed", "42", "-n", "3"]);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    let first = jexplore::ConfigSpace::orin().random_sample(42, 1)[0];
    let expected: Vec<String> = first.values().iter().map(u64::to_string).collect();
    assert_eq!(lines[1], expected.join(","));
}
