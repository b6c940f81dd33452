use std::path::PathBuf;

use compliant_planner::harness::experiment::{run_executions, run_plan, sweep, Blocking, GridAxis};
use compliant_planner::harness::trace::{self, TraceRecord};
use compliant_planner::harness::{load_scenario, parse_scenario, Scenario};
use compliant_planner::policy::{ExecEvent, ExecOutcome, PolicyGraph};
use compliant_planner::spaces::Configuration;
use compliant_planner::Error;
use nalgebra::{UnitQuaternion, Vector3};

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn load(name: &str) -> Scenario {
    load_scenario(&scenario_path(name)).unwrap()
}

#[test]
fn bundled_scenarios_load_and_validate() {
    for name in ["planar_passages.json", "peg_in_hole.json", "narrow_slot.json", "all_blocked.json"] {
        let s = load(name);
        s.validate().unwrap();
        s.build().unwrap();
        s.build_execution_world().unwrap();
    }
}

#[test]
fn peg_hole_is_thirty_percent_wider_than_peg() {
    let s = load("peg_in_hole.json");
    let peg = &s.robot.boxes[0];
    let peg_width = peg.max.x - peg.min.x;
    let peg_length = peg.max.z - peg.min.z;
    // The hole is the gap between the two table slabs that flank it in x.
    let obstacles = &s.environment.obstacles;
    let left = obstacles.iter().map(|b| b.max.x).filter(|&x| x < 1.0).fold(f64::MIN, f64::max);
    let right = obstacles.iter().map(|b| b.min.x).filter(|&x| x > 1.0).fold(f64::MAX, f64::min);
    assert!(((right - left) / peg_width - 1.3).abs() < 1e-9);
    assert!((s.eps_goal - 0.5 * peg_length).abs() < 1e-12);
}

#[test]
fn planar_goal_tolerance_is_an_eighth_of_the_robot() {
    let s = load("planar_passages.json");
    let lo = s.robot.boxes.iter().map(|b| b.min.x).fold(f64::MAX, f64::min);
    let hi = s.robot.boxes.iter().map(|b| b.max.x).fold(f64::MIN, f64::max);
    assert!((s.eps_goal - (hi - lo) / 8.0).abs() < 1e-12);
}

#[test]
fn schema_errors_name_the_field() {
    let text = std::fs::read_to_string(scenario_path("all_blocked.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["planner"]["n_particles"] = serde_json::json!("many");
    let err = parse_scenario(&v.to_string()).unwrap_err();
    assert!(matches!(err, Error::Schema { .. }));
    assert!(err.to_string().contains("planner.n_particles"), "{err}");

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["execution"]["colour"] = serde_json::json!("red");
    let err = parse_scenario(&v.to_string()).unwrap_err();
    assert!(matches!(err, Error::Schema { .. }), "{err}");

    assert!(parse_scenario("{").is_err());
}

#[test]
fn invalid_values_are_rejected() {
    let mut s = load("all_blocked.json");
    s.gamma = -1.0;
    assert!(s.validate().is_err());
    let mut s = load("all_blocked.json");
    s.execution.blocked.push("no_such_box".into());
    assert!(s.validate().is_err());
    let mut s = load("all_blocked.json");
    s.start = Configuration::spatial(Vector3::zeros(), UnitQuaternion::identity());
    assert!(s.validate().is_err());
}

#[test]
fn same_seed_gives_byte_identical_plan_trace() {
    let s = load("all_blocked.json");
    let world = s.build().unwrap();
    let a = run_plan(&s, &world, 0, 11).unwrap();
    let b = run_plan(&s, &world, 0, 11).unwrap();
    let ta = trace::to_string(&trace::plan_records(&s.name, 11, &a.set)).unwrap();
    let tb = trace::to_string(&trace::plan_records(&s.name, 11, &b.set)).unwrap();
    assert_eq!(ta, tb);
    let c = run_plan(&s, &world, 0, 12).unwrap();
    let tc = trace::to_string(&trace::plan_records(&s.name, 12, &c.set)).unwrap();
    assert_ne!(ta, tc);
}

#[test]
fn plan_trace_round_trips_and_replays_the_same_policy() {
    let s = load("all_blocked.json");
    let world = s.build().unwrap();
    let out = run_plan(&s, &world, 0, 5).unwrap();
    assert!(!out.set.solutions.is_empty());
    let text = trace::to_string(&trace::plan_records(&s.name, 5, &out.set)).unwrap();
    let records = trace::read_records(text.as_bytes()).unwrap();
    let mut set = trace::solution_set_from_records(&records).unwrap();
    // Wall time is not serialized.
    set.stats.wall_seconds = out.set.stats.wall_seconds;
    assert_eq!(set, out.set);
    let original = PolicyGraph::build(&out.set, &s.adaptation, s.planner.n_attempt).unwrap();
    let replayed = PolicyGraph::build(&set, &s.adaptation, s.planner.n_attempt).unwrap();
    assert_eq!(original, replayed);
    assert_eq!(
        serde_json::to_string(&original).unwrap(),
        serde_json::to_string(&replayed).unwrap()
    );
}

#[test]
fn empty_and_malformed_traces() {
    let records = trace::read_records("".as_bytes()).unwrap();
    assert!(records.is_empty());
    assert!(trace::solution_set_from_records(&records).is_err());
    let err = trace::read_records("{\"record\":\"goal\"}\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("line 1"), "{err}");
    let header_only = "{\"record\":\"header\",\"format\":1,\"kind\":\"plan\",\"scenario\":\"x\",\"seed\":0}\n";
    let records = trace::read_records(header_only.as_bytes()).unwrap();
    assert!(trace::solution_set_from_records(&records).is_err());
}

#[test]
fn sweep_rejects_empty_inputs() {
    let s = load("all_blocked.json");
    let grid = vec!["gamma=0.125".parse::<GridAxis>().unwrap()];
    assert!(matches!(sweep(&s, &grid, &[], 1, Blocking::Scenario), Err(Error::Usage(_))));
    assert!(matches!(sweep(&s, &[], &[1], 1, Blocking::Scenario), Err(Error::Usage(_))));
    assert!("gamma".parse::<GridAxis>().is_err());
    assert!("speed=1".parse::<GridAxis>().is_err());
    assert!("gamma=".parse::<GridAxis>().is_err());
}

#[test]
fn sweep_labels_grid_points() {
    let s = load("all_blocked.json");
    let grid = vec!["n_particles=1,4".parse::<GridAxis>().unwrap()];
    let reports = sweep(&s, &grid, &[3], 0, Blocking::Scenario).unwrap();
    let labels: Vec<_> = reports.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["n_particles=1", "n_particles=4"]);
    assert!(reports.iter().all(|r| r.runs.is_empty() && r.plans.len() == 1));
}

#[test]
fn blocked_execution_trace_records_observed_nodes() {
    let s = load("all_blocked.json");
    let world = s.build().unwrap();
    let out = run_plan(&s, &world, 0, 2).unwrap();
    let policy = PolicyGraph::build(&out.set, &s.adaptation, s.planner.n_attempt).unwrap();
    let exec_world = s.build_execution_world().unwrap();
    let runs = run_executions(&s, &world, &exec_world, &policy, None, 2, 9, &s.execution.budget, false).unwrap();
    let results: Vec<_> = runs.iter().map(|(r, res)| (r.seed, res.clone())).collect();
    let records = trace::execution_records(&s.name, 9, &policy, &results);
    let text = trace::to_string(&records).unwrap();
    let back = trace::read_records(text.as_bytes()).unwrap();
    assert_eq!(back, records);
    let inserted = back
        .iter()
        .filter(|r| matches!(r, TraceRecord::Event { event: ExecEvent::ObservedInserted { .. }, .. }))
        .count();
    assert!(inserted >= 1);
    assert!(runs.iter().all(|(r, _)| r.outcome == ExecOutcome::Failure));
}
