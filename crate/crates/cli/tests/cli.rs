use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

/// Fresh scratch directory per test.
fn scratch(test: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cplan-cli-{}-{test}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn cplan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cplan"))
        .args(args)
        .env("CPLAN_OUT_DIR", dir)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn plan_execute_and_replay() {
    let dir = scratch("pipeline");
    let blocked = scenario("all_blocked.json");
    let plan = cplan(&dir, &["plan", "--scenario", s(&blocked), "--seed", "3"]);
    assert_eq!(plan.status.code(), Some(0), "{}", String::from_utf8_lossy(&plan.stderr));
    // Without --out the trace lands in CPLAN_OUT_DIR.
    let trace = dir.join("all_blocked-plan-3.jsonl");
    assert!(trace.exists());

    let report = dir.join("report.json");
    let exec = cplan(
        &dir,
        &["execute", "--scenario", s(&blocked), "--trace", s(&trace), "--runs", "2", "--report", s(&report)],
    );
    assert_eq!(exec.status.code(), Some(0), "{}", String::from_utf8_lossy(&exec.stderr));
    assert!(dir.join("all_blocked-exec-0.jsonl").exists());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 2);

    let policy = dir.join("policy.json");
    let replay = cplan(&dir, &["replay", "--trace", s(&trace), "--out", s(&policy)]);
    assert_eq!(replay.status.code(), Some(0), "{}", String::from_utf8_lossy(&replay.stderr));
    assert!(policy.exists());
    let summary = cplan(&dir, &["replay", "--trace", s(&dir.join("all_blocked-exec-0.jsonl"))]);
    assert_eq!(summary.status.code(), Some(0), "{}", String::from_utf8_lossy(&summary.stderr));
}

#[test]
fn plan_is_deterministic() {
    let dir = scratch("determinism");
    let blocked = scenario("all_blocked.json");
    for out in ["a.jsonl", "b.jsonl"] {
        let o = cplan(&dir, &["plan", "--scenario", s(&blocked), "--seed", "8", "--out", s(&dir.join(out))]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(dir.join("a.jsonl")).unwrap(), std::fs::read(dir.join("b.jsonl")).unwrap());
}

#[test]
fn no_solution_exits_with_two() {
    let dir = scratch("nosolution");
    let o = cplan(&dir, &["plan", "--scenario", s(&scenario("all_blocked.json")), "--iterations", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(dir.join("all_blocked-plan-0.jsonl").exists());
}

#[test]
fn usage_and_input_errors_exit_with_one() {
    let dir = scratch("errors");
    let blocked = scenario("all_blocked.json");
    let sweep = cplan(&dir, &["sweep", "--scenario", s(&blocked), "--grid", "gamma=0.1"]);
    assert_eq!(sweep.status.code(), Some(1));

    let bad = dir.join("bad.json");
    std::fs::write(&bad, "{\"name\": 3}").unwrap();
    let o = cplan(&dir, &["plan", "--scenario", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());

    let missing = cplan(&dir, &["execute", "--scenario", s(&blocked), "--trace", s(&dir.join("nope.jsonl"))]);
    assert_eq!(missing.status.code(), Some(1));

    let bad_block = cplan(&dir, &["plan", "--scenario", s(&blocked), "--block", "no_such_box"]);
    assert_eq!(bad_block.status.code(), Some(1));
}

#[test]
fn sweep_writes_a_report() {
    let dir = scratch("sweep");
    let o = cplan(
        &dir,
        &["sweep", "--scenario", s(&scenario("all_blocked.json")), "--grid", "n_particles=1,4", "--seeds", "1", "--exec", "1"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("all_blocked-sweep.json")).unwrap()).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 2);
}
