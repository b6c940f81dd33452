use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;

use compliant_planner::environment::Aabb;
use compliant_planner::harness::load_scenario;
use compliant_planner::seeds::rng_from_seed;
use compliant_planner::simulator::Outcome;
use compliant_planner::spaces::{Configuration, NoiseModel, Space};
use nalgebra::{UnitQuaternion, Vector3};

/// Every bundled scenario's gains must carry the robot ten body-lengths through
/// open space, turning as it goes, within both the planning and execution budgets.
#[test]
fn bundled_budgets_cover_ten_body_lengths_of_free_motion() {
    for name in ["planar_passages.json", "peg_in_hole.json", "narrow_slot.json", "all_blocked.json"] {
        let mut s = load_scenario(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)).unwrap();
        let boxes = &s.robot.boxes;
        let length = (0..3)
            .map(|a| {
                let lo = boxes.iter().map(|b| b.min[a]).fold(f64::MAX, f64::min);
                let hi = boxes.iter().map(|b| b.max[a]).fold(f64::MIN, f64::max);
                hi - lo
            })
            .fold(0.0, f64::max);
        let run = 10.0 * length;
        let margin = 1.5 * length;
        let space = s.environment.space;
        let (lo, hi) = match space {
            Space::Se2 => (Vector3::new(-margin, -margin, 0.0), Vector3::new(run + margin, margin, 0.0)),
            Space::Se3 => (Vector3::new(-margin, -margin, -margin), Vector3::new(run + margin, margin, margin)),
        };
        s.environment.bounds = Aabb::new(lo, hi);
        s.environment.obstacles.clear();
        s.environment.regions.clear();
        let (start, target) = match space {
            Space::Se2 => (Configuration::planar(0.0, 0.0, 0.0), Configuration::planar(run, 0.0, FRAC_PI_2)),
            Space::Se3 => (
                Configuration::spatial(Vector3::zeros(), UnitQuaternion::identity()),
                Configuration::spatial(Vector3::new(run, 0.0, 0.0), UnitQuaternion::from_euler_angles(0.0, 0.0, FRAC_PI_2)),
            ),
        };
        s.start = start;
        s.goal = target;
        let world = s.build().unwrap();
        let sim = &world.sim;
        for steps in [s.gains.simulate_steps(), s.gains.exec_steps()] {
            let res = sim.simulate_motion_with(&start, &target, &NoiseModel::noiseless(), steps, false, &mut rng_from_seed(0));
            assert_eq!(res.outcome, Outcome::Converged, "{name}: {steps} steps reached {:?}", res.final_config);
        }
    }
}
