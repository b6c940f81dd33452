//! Particle-belief RRT with split detection and reversibility estimates.
//!
//! The global loop samples targets, picks the node with the smallest
//! [`proximity`] and extends toward the target. Each extension simulates a
//! full set of particles, clusters the outcomes into child nodes and estimates
//! how reliably each child can be driven back to its parent.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{cluster_particles, BeliefMatcher, ClusterContext, ClusteringConfig};
use crate::error::{Error, Result};
use crate::seeds;
use crate::simulator::Simulator;
use crate::spaces::{sample_uniform, BeliefState, Configuration, NoiseModel, SamplingBounds, SpaceMetric};

/// Expectations closer than this to the parent's count as "did not move".
const MIN_PROGRESS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    pub n_particles: usize,
    pub alpha_p: f64,
    pub alpha_v: f64,
    pub p_goal: f64,
    pub eps_goal: f64,
    /// Cap on retry attempts used for effective probabilities and attempt estimates.
    pub n_attempt: usize,
    pub goal_bias: f64,
    /// Maximum consecutive extensions toward one target in connect mode.
    pub connect_cap: usize,
    /// Outer-loop iteration budget.
    pub max_iterations: Option<usize>,
    /// Wall-clock budget in seconds.
    pub t_planning: Option<f64>,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            n_particles: 24,
            alpha_p: 0.75,
            alpha_v: 0.75,
            p_goal: 0.51,
            eps_goal: 0.125,
            n_attempt: 50,
            goal_bias: 0.1,
            connect_cap: 32,
            max_iterations: Some(1000),
            t_planning: None,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::usage("n_particles must be at least 1"));
        }
        for (name, w) in [("alpha_p", self.alpha_p), ("alpha_v", self.alpha_v), ("goal_bias", self.goal_bias)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::usage(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.p_goal > 0.0 && self.p_goal <= 1.0) {
            return Err(Error::usage("p_goal must lie in (0, 1]"));
        }
        if !(self.eps_goal > 0.0) {
            return Err(Error::usage("eps_goal must be positive"));
        }
        if self.n_attempt == 0 {
            return Err(Error::usage("n_attempt must be at least 1"));
        }
        if self.max_iterations.is_none() && self.t_planning.is_none() {
            return Err(Error::usage("planning needs an iteration or time budget"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerNode {
    pub id: usize,
    pub belief: BeliefState,
    /// Target configuration of the action that produced this node; `None` at the root.
    pub action: Option<Configuration>,
    pub parent: Option<usize>,
    pub p_transition: f64,
    pub reverse_attempts: u32,
    pub reverse_successes: u32,
    /// Probability of reaching this node from its parent within `n_attempt` tries.
    pub p_effective: f64,
    pub p_path: f64,
    pub is_split_result: bool,
    pub expectation: Configuration,
    /// L1 norm of the belief variance.
    pub variance_l1: f64,
}

impl PlannerNode {
    fn new(
        id: usize,
        belief: BeliefState,
        action: Option<Configuration>,
        parent: Option<usize>,
        p_transition: f64,
        p_path: f64,
        is_split_result: bool,
    ) -> Self {
        let expectation = belief.expect();
        let variance_l1 = belief.variance().iter().map(|x| x.abs()).sum();
        Self {
            id,
            belief,
            action,
            parent,
            p_transition,
            reverse_attempts: 0,
            reverse_successes: 0,
            p_effective: p_transition,
            p_path,
            is_split_result,
            expectation,
            variance_l1,
        }
    }

    /// Fraction of reverse simulations that returned to the parent (1 when none were run).
    pub fn reversibility(&self) -> f64 {
        if self.reverse_attempts == 0 {
            1.0
        } else {
            self.reverse_successes as f64 / self.reverse_attempts as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub iterations: usize,
    pub extends: usize,
    pub particles_simulated: usize,
    pub particles_stored: usize,
    pub first_solution_iteration: Option<usize>,
    /// Not serialized so traces stay byte-identical across runs.
    #[serde(skip)]
    pub wall_seconds: f64,
}

/// The planner's tree and the solution paths found in it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSet {
    pub nodes: Vec<PlannerNode>,
    /// Root-to-goal node id paths.
    pub solutions: Vec<Vec<usize>>,
    pub excluded: BTreeSet<usize>,
    pub goal: Configuration,
    pub stats: PlanStats,
}

impl SolutionSet {
    pub fn path_to(&self, id: usize) -> Vec<usize> {
        path_to(&self.nodes, id)
    }
}

fn path_to(nodes: &[PlannerNode], id: usize) -> Vec<usize> {
    let mut path = vec![id];
    let mut cur = id;
    while let Some(p) = nodes[cur].parent {
        path.push(p);
        cur = p;
    }
    path.reverse();
    path
}

/// Node-to-configuration proximity: distance from the belief mean, discounted for
/// likely and concentrated nodes.
pub fn proximity(node: &PlannerNode, q: &Configuration, params: &PlannerParams, metric: &SpaceMetric) -> f64 {
    let dist = metric.between(&node.expectation, q);
    let prob = (1.0 - node.p_path) * params.alpha_p + (1.0 - params.alpha_p);
    let spread = libm::erf(node.variance_l1) * params.alpha_v + (1.0 - params.alpha_v);
    dist * prob * spread
}

/// Probability of having reached the outcome within `k` attempts when each
/// attempt succeeds with `p` and each failure can be reversed with `r`.
pub fn effective_probability(p: f64, r: f64, k: usize) -> f64 {
    let mut at = 1.0;
    let mut reached = 0.0;
    for _ in 0..k {
        reached += at * p;
        at *= (1.0 - p) * r;
    }
    reached.min(1.0)
}

/// True if the node reaches the goal with probability at least `p_goal`.
pub fn check_goal(node: &PlannerNode, q_goal: &Configuration, params: &PlannerParams, metric: &SpaceMetric) -> bool {
    let particles = node.belief.particles();
    let at_goal = particles
        .iter()
        .filter(|q| metric.between(q, q_goal) <= params.eps_goal)
        .count();
    node.p_path * (at_goal as f64 / particles.len() as f64) >= params.p_goal
}

/// Excludes the solution branch ending at `terminal` from nearest-neighbour search.
/// Walks toward the root and stops below the first split result (or the root).
pub fn prune_solution_branch(nodes: &[PlannerNode], excluded: &mut BTreeSet<usize>, terminal: usize) {
    if nodes[terminal].parent.is_none() {
        return;
    }
    excluded.insert(terminal);
    if nodes[terminal].is_split_result {
        return;
    }
    let mut cur = nodes[terminal].parent;
    while let Some(id) = cur {
        let node = &nodes[id];
        if node.parent.is_none() || node.is_split_result {
            break;
        }
        excluded.insert(id);
        cur = node.parent;
    }
}

/// Draws `n` particles uniformly with replacement.
fn resample<R: Rng + ?Sized>(belief: &BeliefState, n: usize, rng: &mut R) -> Vec<Configuration> {
    let ps = belief.particles();
    (0..n).map(|_| ps[rng.random_range(0..ps.len())]).collect()
}

/// Grows a tree of belief nodes toward sampled targets.
pub struct Planner {
    sim: Simulator,
    noise: NoiseModel,
    clustering: ClusteringConfig,
    params: PlannerParams,
    sampling: SamplingBounds,
    goal: Configuration,
    nodes: Vec<PlannerNode>,
    solutions: Vec<Vec<usize>>,
    excluded: BTreeSet<usize>,
    stats: PlanStats,
}

impl Planner {
    pub fn new(
        sim: Simulator,
        noise: NoiseModel,
        clustering: ClusteringConfig,
        params: PlannerParams,
        sampling: SamplingBounds,
        start: BeliefState,
        goal: Configuration,
    ) -> Result<Self> {
        params.validate()?;
        clustering.validate()?;
        if start.space() != sim.space() || goal.space() != sim.space() || sampling.space != sim.space() {
            return Err(Error::usage("start, goal, sampling bounds and robot must share one space"));
        }
        if start.len() > params.n_particles {
            return Err(Error::usage("start belief has more than n_particles particles"));
        }
        let tol = sim.resolution_settings().tolerance;
        if start.particles().iter().any(|q| sim.max_penetration(q) > tol) {
            return Err(Error::usage("start configuration is in collision"));
        }
        let root = PlannerNode::new(0, start, None, None, 1.0, 1.0, false);
        let stats = PlanStats {
            particles_stored: root.belief.len(),
            ..PlanStats::default()
        };
        Ok(Self {
            sim,
            noise,
            clustering,
            params,
            sampling,
            goal,
            nodes: vec![root],
            solutions: Vec::new(),
            excluded: BTreeSet::new(),
            stats,
        })
    }

    pub fn nodes(&self) -> &[PlannerNode] {
        &self.nodes
    }

    pub fn solutions(&self) -> &[Vec<usize>] {
        &self.solutions
    }

    pub fn excluded(&self) -> &BTreeSet<usize> {
        &self.excluded
    }

    pub fn stats(&self) -> &PlanStats {
        &self.stats
    }

    pub fn params(&self) -> &PlannerParams {
        &self.params
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    fn ctx(&self) -> ClusterContext<'_> {
        ClusterContext {
            sim: &self.sim,
            eps_goal: self.params.eps_goal,
        }
    }

    /// Non-excluded node with the smallest proximity, skipping nodes already at `q`.
    /// Ties go to the lowest id.
    pub fn nearest(&self, q: &Configuration) -> Option<usize> {
        let metric = self.sim.metric();
        let mut best: Option<(usize, f64)> = None;
        for n in &self.nodes {
            if self.excluded.contains(&n.id) {
                continue;
            }
            // Already at the target: extending would only copy the node.
            if metric.between(&n.expectation, q) < self.sim.convergence_tol() {
                continue;
            }
            let d = proximity(n, q, &self.params, metric);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((n.id, d));
            }
        }
        best.map(|(id, _)| id)
    }

    /// Simulates every particle toward `target` in parallel with per-particle streams.
    fn simulate_all<R: Rng + ?Sized>(
        &self,
        particles: &[Configuration],
        target: &Configuration,
        rng: &mut R,
    ) -> Vec<Configuration> {
        let seeds: Vec<u64> = particles.iter().map(|_| rng.random()).collect();
        let steps = self.sim.gains().simulate_steps();
        particles
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(q, &seed)| {
                let mut prng = seeds::rng_from_seed(seed);
                self.sim
                    .simulate_motion_with(q, target, &self.noise, steps, false, &mut prng)
                    .final_config
            })
            .collect()
    }

    /// Fraction of particles resampled from `child` that return to `parent`'s belief
    /// when driven toward the parent's mean.
    pub fn estimate_reversibility<R: Rng + ?Sized>(
        &mut self,
        child: &BeliefState,
        parent: usize,
        rng: &mut R,
    ) -> Result<(u32, u32)> {
        let n = self.params.n_particles;
        let starts = if child.len() == n { child.particles().to_vec() } else { resample(child, n, rng) };
        let target = self.nodes[parent].expectation;
        let finals = self.simulate_all(&starts, &target, rng);
        self.stats.particles_simulated += n;
        let ctx = self.ctx();
        let matcher = BeliefMatcher::new(self.nodes[parent].belief.particles(), &self.clustering, &ctx)?;
        let successes = finals.iter().filter(|q| matcher.matches(q)).count();
        Ok((n as u32, successes as u32))
    }

    /// One local-planner extension from `near` toward `target`. Returns the new node ids.
    pub fn extend<R: Rng + ?Sized>(&mut self, near: usize, target: &Configuration, rng: &mut R) -> Result<Vec<usize>> {
        let n = self.params.n_particles;
        let source = &self.nodes[near];
        let initial = if !source.is_split_result && source.belief.len() == n {
            source.belief.particles().to_vec()
        } else {
            resample(&source.belief.clone(), n, rng)
        };
        let results = self.simulate_all(&initial, target, rng);
        self.stats.particles_simulated += n;
        self.stats.extends += 1;

        if results.iter().zip(&initial).all(|(a, b)| a == b) {
            return Ok(Vec::new());
        }
        let clusters = cluster_particles(&results, &self.clustering, &self.ctx())?;
        let split = clusters.len() > 1;
        let parent_mean = self.nodes[near].expectation;
        let parent_path = self.nodes[near].p_path;
        let metric = *self.sim.metric();
        let mut created = Vec::new();
        for cluster in clusters {
            let belief = BeliefState::new(cluster.iter().map(|&i| results[i]).collect())?;
            let p = cluster.len() as f64 / n as f64;
            let id = self.nodes.len();
            let node = PlannerNode::new(id, belief, Some(*target), Some(near), p, parent_path * p, split);
            if metric.between(&node.expectation, &parent_mean) < MIN_PROGRESS {
                continue;
            }
            self.stats.particles_stored += node.belief.len();
            self.nodes.push(node);
            created.push(id);
        }
        for &id in &created {
            let belief = self.nodes[id].belief.clone();
            let (attempts, successes) = self.estimate_reversibility(&belief, near, rng)?;
            let node = &mut self.nodes[id];
            node.reverse_attempts = attempts;
            node.reverse_successes = successes;
            node.p_effective = effective_probability(node.p_transition, node.reversibility(), self.params.n_attempt);
        }
        Ok(created)
    }

    fn record_goals(&mut self, ids: &[usize]) -> bool {
        let mut found = false;
        for &id in ids {
            if check_goal(&self.nodes[id], &self.goal, &self.params, self.sim.metric()) {
                self.solutions.push(path_to(&self.nodes, id));
                prune_solution_branch(&self.nodes, &mut self.excluded, id);
                if self.stats.first_solution_iteration.is_none() {
                    self.stats.first_solution_iteration = Some(self.stats.iterations);
                }
                found = true;
            }
        }
        found
    }

    /// Extends toward `target`, repeating (connect mode) until a solution exists.
    fn grow<R: Rng + ?Sized>(&mut self, near: usize, target: &Configuration, rng: &mut R) -> Result<()> {
        let connect = self.solutions.is_empty();
        let metric = *self.sim.metric();
        let mut from = near;
        for _ in 0..self.params.connect_cap.max(1) {
            let created = self.extend(from, target, rng)?;
            let found = self.record_goals(&created);
            if !connect || found || created.len() != 1 {
                break;
            }
            let child = created[0];
            let before = metric.between(&self.nodes[from].expectation, target);
            let after = metric.between(&self.nodes[child].expectation, target);
            // Stop once the target is reached or an extension stops making headway.
            if after <= self.params.eps_goal || after > before - self.sim.convergence_tol() {
                break;
            }
            from = child;
        }
        Ok(())
    }

    fn budget_left(&self, started: &Instant) -> bool {
        if let Some(max) = self.params.max_iterations {
            if self.stats.iterations >= max {
                return false;
            }
        }
        if let Some(t) = self.params.t_planning {
            if started.elapsed().as_secs_f64() >= t {
                return false;
            }
        }
        true
    }

    /// Runs the anytime loop until the budget is spent. A check between iterations
    /// lets callers stop early (e.g. after the first solution).
    pub fn plan_until<R: Rng + ?Sized>(&mut self, rng: &mut R, mut stop: impl FnMut(&Self) -> bool) -> Result<()> {
        let started = Instant::now();
        let root_goal: Vec<usize> = vec![0];
        if self.stats.iterations == 0 && self.solutions.is_empty() {
            self.record_goals(&root_goal);
        }
        while self.budget_left(&started) && !stop(self) {
            self.stats.iterations += 1;
            let target = if rng.random::<f64>() < self.params.goal_bias {
                self.goal
            } else {
                sample_uniform(&self.sampling, rng)?
            };
            let Some(near) = self.nearest(&target) else { break };
            self.grow(near, &target, rng)?;
        }
        self.stats.wall_seconds += started.elapsed().as_secs_f64();
        Ok(())
    }

    pub fn plan<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.plan_until(rng, |_| false)
    }

    pub fn into_solution_set(self) -> SolutionSet {
        SolutionSet {
            nodes: self.nodes,
            solutions: self.solutions,
            excluded: self.excluded,
            goal: self.goal,
            stats: self.stats,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::environment::{Aabb, EnvironmentSpec, Region, RobotModel, VoxelEnvironment};
    use crate::seeds::rng_from_seed;
    use crate::simulator::ControllerGains;
    use crate::spaces::{RotationRange, Space};
    use crate::clustering::ClusteringMethod;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn node_with(p_path: f64, var: f64) -> PlannerNode {
        let mut n = PlannerNode::new(0, BeliefState::point(Configuration::planar(0.0, 0.0, 0.0), 1), None, None, 1.0, p_path, false);
        n.variance_l1 = var;
        n
    }

    #[test]
    fn proximity_examples() {
        let metric = SpaceMetric::new(1.0).unwrap();
        let q = Configuration::planar(3.0, 4.0, 0.0);
        let params = PlannerParams::default();
        assert_relative_eq!(proximity(&node_with(1.0, 0.0), &q, &params, &metric), 5.0 * 0.0625);
        let off = PlannerParams { alpha_p: 0.0, alpha_v: 0.0, ..params };
        assert_eq!(proximity(&node_with(0.3, 2.0), &q, &off, &metric), 5.0);
        // erf saturates to 1 for large variance.
        assert_relative_eq!(proximity(&node_with(0.5, 1e3), &q, &params, &metric), 5.0 * 0.625, epsilon = 1e-12);
    }

    /// Closed form of the retry process when reversal always succeeds.
    fn retry_closed_form(p: f64, k: usize) -> f64 {
        1.0 - (1.0 - p).powi(k as i32)
    }

    #[test]
    fn effective_probability_examples() {
        assert_eq!(effective_probability(1.0, 0.3, 1), 1.0);
        assert_relative_eq!(effective_probability(0.5, 1.0, 2), 0.75);
        assert_relative_eq!(effective_probability(0.5, 0.0, 50), 0.5);
        for k in [1, 3, 10] {
            assert_relative_eq!(effective_probability(0.3, 1.0, k), retry_closed_form(0.3, k), epsilon = 1e-12);
        }
    }

    /// Simulates the attempt/reverse process directly.
    fn retry_monte_carlo(p: f64, r: f64, k: usize, trials: usize, seed: u64) -> f64 {
        let mut rng = rng_from_seed(seed);
        let mut hits = 0;
        for _ in 0..trials {
            for _ in 0..k {
                if rng.random::<f64>() < p {
                    hits += 1;
                    break;
                }
                if rng.random::<f64>() >= r {
                    break;
                }
            }
        }
        hits as f64 / trials as f64
    }

    #[test]
    fn effective_probability_matches_monte_carlo() {
        for (p, r, k) in [(0.3, 0.5, 5), (0.1, 0.9, 20), (0.6, 0.2, 3)] {
            let mc = retry_monte_carlo(p, r, k, 200_000, 7);
            assert!((effective_probability(p, r, k) - mc).abs() < 0.005, "p={p} r={r} k={k} mc={mc}");
        }
    }

    #[test]
    fn effective_probability_monotone_on_grid() {
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        for &p in &grid {
            for &r in &grid {
                let mut last = 0.0;
                for k in 1..30 {
                    let e = effective_probability(p, r, k);
                    assert!(e + 1e-15 >= last);
                    assert!((0.0..=1.0).contains(&e));
                    last = e;
                }
            }
        }
        for k in [1, 2, 10, 50] {
            for w in grid.windows(2) {
                for &x in &grid {
                    assert!(effective_probability(w[1], x, k) + 1e-15 >= effective_probability(w[0], x, k));
                    assert!(effective_probability(x, w[1], k) + 1e-15 >= effective_probability(x, w[0], k));
                }
            }
        }
    }

    fn goal_node(p_path: f64, at_goal: usize, total: usize) -> PlannerNode {
        let mut ps = vec![Configuration::planar(0.0, 0.0, 0.0); at_goal];
        ps.extend(vec![Configuration::planar(5.0, 0.0, 0.0); total - at_goal]);
        PlannerNode::new(1, BeliefState::new(ps).unwrap(), None, Some(0), 1.0, p_path, false)
    }

    #[test]
    fn goal_check_examples() {
        let metric = SpaceMetric::new(1.0).unwrap();
        let goal = Configuration::planar(0.0, 0.0, 0.0);
        let params = PlannerParams::default();
        assert!(check_goal(&goal_node(1.0, 10, 10), &goal, &PlannerParams { p_goal: 1.0, ..params }, &metric));
        assert!(!check_goal(&goal_node(0.6, 8, 10), &goal, &params, &metric));
        assert!(check_goal(&goal_node(0.8, 8, 10), &goal, &params, &metric));
    }

    fn chain(splits: &[bool]) -> Vec<PlannerNode> {
        let mut nodes = vec![PlannerNode::new(
            0,
            BeliefState::point(Configuration::planar(0.0, 0.0, 0.0), 1),
            None,
            None,
            1.0,
            1.0,
            false,
        )];
        for (i, &s) in splits.iter().enumerate() {
            let q = Configuration::planar(i as f64 + 1.0, 0.0, 0.0);
            nodes.push(PlannerNode::new(i + 1, BeliefState::point(q, 1), Some(q), Some(i), 1.0, 1.0, s));
        }
        nodes
    }

    #[test]
    fn pruning_examples() {
        let nodes = chain(&[false, false, false]);
        let mut ex = BTreeSet::new();
        prune_solution_branch(&nodes, &mut ex, 3);
        assert_eq!(ex, BTreeSet::from([1, 2, 3]));
        prune_solution_branch(&nodes, &mut ex, 3);
        assert_eq!(ex, BTreeSet::from([1, 2, 3]));

        // Depths 1..5, split result at depth 2.
        let nodes = chain(&[false, true, false, false, false]);
        let mut ex = BTreeSet::new();
        prune_solution_branch(&nodes, &mut ex, 5);
        assert_eq!(ex, BTreeSet::from([3, 4, 5]));

        let nodes = chain(&[false, false, true]);
        let mut ex = BTreeSet::new();
        prune_solution_branch(&nodes, &mut ex, 3);
        assert_eq!(ex, BTreeSet::from([3]));
        prune_solution_branch(&nodes, &mut ex, 0);
        assert_eq!(ex, BTreeSet::from([3]));
    }

    fn v(x: f64, y: f64) -> Vector3<f64> {
        Vector3::new(x, y, 0.0)
    }

    fn open_planner(n_particles: usize, gamma: f64, goal: Configuration) -> Planner {
        let env = VoxelEnvironment::build(&EnvironmentSpec {
            space: Space::Se2,
            bounds: Aabb::new(v(0.0, 0.0), v(4.0, 4.0)),
            resolution: 0.1,
            obstacles: vec![],
            regions: vec![Region { id: "all".into(), aabb: Aabb::new(v(0.0, 0.0), v(4.0, 4.0)) }],
        })
        .unwrap();
        let robot = RobotModel::from_boxes(Space::Se2, &[Aabb::new(v(-0.2, -0.1), v(0.2, 0.1))], 0.05, vec![]).unwrap();
        let metric = SpaceMetric::for_robot_radius(robot.bounding_radius).unwrap();
        let params = PlannerParams {
            n_particles,
            eps_goal: 0.1,
            max_iterations: Some(20),
            ..PlannerParams::default()
        };
        let sim = Simulator::new(Arc::new(env), Arc::new(robot), ControllerGains::default(), metric, params.eps_goal).unwrap();
        let sampling = SamplingBounds {
            space: Space::Se2,
            lower: v(0.3, 0.3),
            upper: v(3.7, 3.7),
            rotation: RotationRange::Planar { min: -3.14, max: 3.14 },
        };
        let clustering = ClusteringConfig::new(ClusteringMethod::RegionSignature, 0.75, params.eps_goal).unwrap();
        let start = BeliefState::point(Configuration::planar(1.0, 1.0, 0.0), n_particles);
        Planner::new(sim, NoiseModel::from_gamma(gamma).unwrap(), clustering, params, sampling, start, goal).unwrap()
    }

    #[test]
    fn free_space_extend_is_deterministic_single_node() {
        let mut planner = open_planner(24, 0.0, Configuration::planar(3.0, 3.0, 0.0));
        let ids = planner.extend(0, &Configuration::planar(2.0, 1.5, 0.5), &mut rng_from_seed(0)).unwrap();
        assert_eq!(ids.len(), 1);
        let node = &planner.nodes()[ids[0]];
        assert_eq!(node.p_transition, 1.0);
        assert_eq!(node.reversibility(), 1.0);
        assert_eq!(node.belief.len(), 24);
    }

    #[test]
    fn adjacent_goal_gives_one_edge_solution() {
        let goal = Configuration::planar(1.5, 1.2, 0.0);
        let mut planner = open_planner(24, 0.0, goal);
        planner
            .plan_until(&mut rng_from_seed(1), |p| !p.solutions().is_empty())
            .unwrap();
        let first = &planner.solutions()[0];
        assert_eq!(first.first(), Some(&0));
        assert!(planner.solutions().iter().any(|s| s.len() == 2));
    }

    #[test]
    fn single_particle_noiseless_tree_is_deterministic() {
        let mut planner = open_planner(1, 0.0, Configuration::planar(3.5, 3.5, 0.0));
        planner.plan(&mut rng_from_seed(2)).unwrap();
        for n in planner.nodes() {
            assert_eq!(n.belief.len(), 1);
            assert_eq!(n.p_transition, 1.0);
            assert_eq!(n.p_path, 1.0);
        }
    }

    #[test]
    fn storage_bound_and_probability_invariants() {
        let mut planner = open_planner(8, 0.125, Configuration::planar(3.5, 3.5, 0.0));
        planner.plan(&mut rng_from_seed(3)).unwrap();
        let stats = planner.stats();
        let stored: usize = planner.nodes().iter().map(|n| n.belief.len()).sum();
        assert_eq!(stored, stats.particles_stored);
        assert!(stored <= (stats.extends + 1) * 8);
        for n in &planner.nodes()[1..] {
            let parent = &planner.nodes()[n.parent.unwrap()];
            assert!(n.p_path <= parent.p_path + 1e-15);
            assert!(n.p_transition > 0.0 && n.p_transition <= 1.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn nearest_skips_excluded(excl in proptest::collection::btree_set(1usize..6, 0..5), x in 0.0..6.0f64) {
            let mut planner = open_planner(1, 0.0, Configuration::planar(3.0, 3.0, 0.0));
            let nodes = chain(&[false; 5]);
            planner.nodes = nodes;
            planner.excluded = excl.clone();
            let got = planner.nearest(&Configuration::planar(x, 0.0, 0.0)).unwrap();
            prop_assert!(!excl.contains(&got));
        }
    }
}
