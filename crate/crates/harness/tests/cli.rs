use std::process::Command;

fn tlvar(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_tlvar"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"experiment": "sim1", "replications": 0}"#).unwrap();
    assert_eq!(
        tlvar(&["simulate", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(tlvar(&["simulate"]).status.code(), Some(1));
    assert_eq!(tlvar(&["bogus"]).status.code(), Some(1));

    let missing = dir.path().join("missing.json");
    std::fs::write(
        &missing,
        r#"{"experiment": "forecast", "data": {"target": "nope.csv", "sources": ["nope2.csv"]}}"#,
    )
    .unwrap();
    let never = dir.path().join("never");
    let out = tlvar(&[
        "forecast",
        "--config",
        missing.to_str().unwrap(),
        "--out",
        never.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(
        !never.exists(),
        "a failed run must not create its output directory"
    );
    // A simulation config cannot be forecast.
    let sim = dir.path().join("sim.json");
    std::fs::write(&sim, r#"{"experiment": "sim3"}"#).unwrap();
    assert_eq!(
        tlvar(&["forecast", "--config", sim.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn simulate_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"experiment": "sim3", "sim": {"settings": [{"k": 2, "n": 5, "s1": 2, "s2": 2}], "p": [1], "h": [0.5]}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = tlvar(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--replications",
        "2",
        "--seed",
        "5",
        "--threads",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["replications"], 2);
}
