use std::path::PathBuf;

use compliant_planner::harness::{load_scenario, parse_scenario, Scenario};
use compliant_planner::planner::Planner;
use compliant_planner::seeds::rng_from_seed;
use compliant_planner::spaces::{BeliefState, Configuration};
use rand::Rng;

fn bundled(name: &str) -> Scenario {
    load_scenario(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)).unwrap()
}

fn planner_from(s: &Scenario, start: BeliefState) -> Planner {
    let world = s.build().unwrap();
    Planner::new(
        world.sim,
        s.noise().unwrap(),
        s.clustering_config().unwrap(),
        s.planner_params(),
        s.sampling_bounds(),
        start,
        s.goal,
    )
    .unwrap()
}

/// Particles at the start's x, spread across the slot height.
fn spread_belief(s: &Scenario, seed: u64) -> BeliefState {
    let mut rng = rng_from_seed(seed);
    let t = s.start.translation();
    BeliefState::new(
        (0..s.planner.n_particles)
            .map(|_| Configuration::planar(t.x, t.y + rng.random_range(-1.0..1.0), 0.0))
            .collect(),
    )
    .unwrap()
}

#[test]
fn extension_through_the_slot_splits_into_three_states() {
    let s = bundled("narrow_slot.json");
    let mut planner = planner_from(&s, spread_belief(&s, 0));
    let created = planner.extend(0, &s.goal, &mut rng_from_seed(1)).unwrap();
    assert_eq!(created.len(), 3);
    let nodes = planner.nodes();
    let total: f64 = created.iter().map(|&i| nodes[i].p_transition).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(created.iter().all(|&i| nodes[i].is_split_result && nodes[i].parent == Some(0)));
    // One state is through the slot, the other two rest on either side of it.
    let mut ys: Vec<(f64, f64)> = created
        .iter()
        .map(|&i| (nodes[i].expectation.translation().x, nodes[i].expectation.translation().y))
        .collect();
    ys.sort_by(|a, b| a.1.total_cmp(&b.1));
    assert!(ys[0].0 < 2.0 && ys[0].1 < 1.75);
    assert!(ys[1].0 > 2.6);
    assert!(ys[2].0 < 2.0 && ys[2].1 > 2.25);
}

const SHELF: &str = r#"{
  "name": "shelf",
  "environment": {
    "space": "se2",
    "bounds": {"min": [0, 0, 0], "max": [4, 3, 0]},
    "resolution": 0.05,
    "obstacles": [{"min": [0, 1.5, 0], "max": [2.5, 1.6, 0]}],
    "regions": [
      {"id": "upper", "aabb": {"min": [0, 1.6, 0], "max": [4, 3, 0]}},
      {"id": "lower", "aabb": {"min": [0, 0, 0], "max": [4, 1.5, 0]}},
      {"id": "side", "aabb": {"min": [2.5, 0, 0], "max": [4, 3, 0]}}
    ]
  },
  "robot": {"boxes": [{"min": [-0.1, -0.1, 0], "max": [0.1, 0.1, 0]}]},
  "start": {"se2": [1.0, 2.0, 0.0]},
  "goal": {"se2": [3.2, 0.5, 0.0]},
  "eps_goal": 0.125,
  "gamma": 0.125,
  "gains": {"kp": 0.5, "kd": 0.0, "timestep": 0.05, "t_simulate": 10.0, "t_exec": 10.0},
  "planner": {"n_particles": 24, "max_iterations": 100}
}"#;

#[test]
fn sliding_off_a_shelf_is_not_reversible() {
    let s = parse_scenario(SHELF).unwrap();
    let mut planner = planner_from(&s, BeliefState::point(s.start, 24));
    let created = planner.extend(0, &s.goal, &mut rng_from_seed(3)).unwrap();
    assert!(!created.is_empty());
    for &i in &created {
        let n = &planner.nodes()[i];
        // The robot slides off the shelf's free end and drops below it; driving
        // straight back runs into the underside.
        assert!(n.expectation.translation().y < 1.5);
        assert!(n.reversibility() < 1.0);
    }
}

#[test]
fn open_motion_is_fully_reversible() {
    let s = parse_scenario(SHELF).unwrap();
    let mut planner = planner_from(&s, BeliefState::point(s.start, 24));
    let created = planner.extend(0, &Configuration::planar(2.0, 2.5, 0.0), &mut rng_from_seed(4)).unwrap();
    assert_eq!(created.len(), 1);
    let n = &planner.nodes()[created[0]];
    assert_eq!(n.p_transition, 1.0);
    assert_eq!(n.reversibility(), 1.0);
}
