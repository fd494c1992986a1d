use std::path::Path;
use std::process::Command;

fn dirflow() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dirflow"))
}

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[test]
fn simulate_writes_artifacts_and_passes() {
    let out = tempfile::tempdir().unwrap();
    let st = dirflow()
        .args(["simulate"])
        .arg(configs().join("gd_negative.json"))
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0));
    for f in ["traj.csv", "angle.svg", "norm.svg", "report.json"] {
        assert!(out.path().join(f).is_file(), "{f} missing");
    }
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["pass"], true);
    assert!(rep["invariants"].as_array().unwrap().iter().all(|i| i["status"] == "pass"));
}

#[test]
fn inflated_constant_exits_one() {
    let out = tempfile::tempdir().unwrap();
    let o = dirflow()
        .arg("simulate")
        .arg(configs().join("negative_control.json"))
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("FAIL linear_flow[0].phase1 margin=-"), "{text}");
}

#[test]
fn malformed_config_exits_two_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\n  \"schema\": \"dirflow.run/1\",\n  \"law\": [1,\n}").unwrap();
    let o = dirflow().arg("simulate").arg(&p).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3 column 11"));

    std::fs::write(&p, std::fs::read_to_string(configs().join("linear_flow.json")).unwrap().replace("\"t_end\": 30.0", "\"t_end\": -1")).unwrap();
    let o = dirflow().arg("simulate").arg(&p).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("method.t_end"));
}

#[test]
fn unknown_suite_exits_two() {
    let st = dirflow().args(["verify", "nonsense"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn verify_identities_passes() {
    let out = tempfile::tempdir().unwrap();
    let st = dirflow().args(["verify", "identities", "--out"]).arg(out.path()).output().unwrap();
    assert_eq!(st.status.code(), Some(0));
    assert!(out.path().join("report.json").is_file());
}

#[test]
fn same_config_and_seed_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sgd.json");
    std::fs::write(
        &cfg,
        r#"{"schema": "dirflow.run/1", "law": {"gaussian2d": true}, "model": {"kind": "linear"},
            "target": [0.0, 1.0], "start": [[0.6, -0.8]],
            "method": {"kind": "gd", "steps": 300, "schedule": {"kind": "constant", "eta": 0.01},
                       "batch": {"kind": "minibatch", "size": 100}}}"#,
    )
    .unwrap();
    let csv = |sub: &str, seed: &str| {
        let out = dir.path().join(sub);
        let st = dirflow().arg("simulate").arg(&cfg).args(["--seed", seed, "--out"]).arg(&out).output().unwrap();
        assert_eq!(st.status.code(), Some(0));
        std::fs::read(out.join("traj.csv")).unwrap()
    };
    assert_eq!(csv("a", "5"), csv("b", "5"));
    assert_ne!(csv("a", "5"), csv("c", "6"));
}

#[test]
fn thread_count_does_not_change_the_sign_map() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sm.json");
    std::fs::write(
        &cfg,
        r#"{"schema": "dirflow.signmap/1", "law": {"atoms": [[1.0, 1.0]]}, "norms": [0.5, 1.0, 2.0], "thetas": [0.2, 1.0, 2.0]}"#,
    )
    .unwrap();
    let run = |threads: &str, sub: &str| {
        let out = dir.path().join(sub);
        let st = dirflow()
            .env("DIRFLOW_THREADS", threads)
            .arg("signmap")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert_eq!(st.status.code(), Some(0));
        std::fs::read(out.join("signmap.csv")).unwrap()
    };
    assert_eq!(run("1", "one"), run("3", "three"));
}
