//! Scenario files: world, robot, task and every tunable in one JSON document.

use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterContext, ClusteringConfig, ClusteringMethod};
use crate::environment::{Aabb, EnvironmentSpec, RobotModel, VoxelEnvironment};
use crate::error::{Error, Result};
use crate::planner::{Planner, PlannerParams};
use crate::policy::{AdaptationConfig, ExecutionBudget, Executor};
use crate::simulator::{ControllerGains, Simulator, StuckDetector};
use crate::spaces::{BeliefState, Configuration, NoiseModel, RotationRange, SamplingBounds, Space, SpaceMetric};

/// Body-frame robot description. Boxes are surface-sampled at `spacing`;
/// explicit `points` are added as given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    #[serde(default)]
    pub boxes: Vec<Aabb>,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default)]
    pub points: Vec<Vector3<f64>>,
    #[serde(default)]
    pub actuation_centers: Vec<Vector3<f64>>,
}

fn default_spacing() -> f64 {
    0.05
}

/// Planner settings as written in a scenario. The goal tolerance lives at the top level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub n_particles: usize,
    pub alpha_p: f64,
    pub alpha_v: f64,
    pub p_goal: f64,
    pub n_attempt: usize,
    pub goal_bias: f64,
    pub connect_cap: usize,
    pub max_iterations: Option<usize>,
    pub t_planning: Option<f64>,
}

impl Default for PlannerSection {
    fn default() -> Self {
        let p = PlannerParams::default();
        Self {
            n_particles: p.n_particles,
            alpha_p: p.alpha_p,
            alpha_v: p.alpha_v,
            p_goal: p.p_goal,
            n_attempt: p.n_attempt,
            goal_bias: p.goal_bias,
            connect_cap: p.connect_cap,
            max_iterations: p.max_iterations,
            t_planning: p.t_planning,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringSection {
    pub method: ClusteringMethod,
    #[serde(default = "default_wcr")]
    pub wcr_threshold: f64,
    /// Defaults to twice the goal tolerance.
    #[serde(default)]
    pub refine_threshold: Option<f64>,
}

fn default_wcr() -> f64 {
    0.75
}

impl Default for ClusteringSection {
    fn default() -> Self {
        Self {
            method: ClusteringMethod::RegionSignature,
            wcr_threshold: default_wcr(),
            refine_threshold: None,
        }
    }
}

/// A named box that can be added as an obstacle at execution time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedBox {
    pub id: String,
    pub aabb: Aabb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionSection {
    pub budget: ExecutionBudget,
    pub detector: StuckDetector,
    /// Boxes that experiments may block, e.g. the passages of a maze.
    pub blockable: Vec<NamedBox>,
    /// Ids from `blockable` that are obstacles during execution.
    pub blocked: Vec<String>,
    /// Extra execution-only obstacles.
    pub extra_obstacles: Vec<Aabb>,
}

impl Default for ExecutionSection {
    fn default() -> Self {
        Self {
            budget: ExecutionBudget {
                max_actions: 200,
                max_sim_steps: 12_000,
            },
            detector: StuckDetector::default(),
            blockable: Vec::new(),
            blocked: Vec::new(),
            extra_obstacles: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub environment: EnvironmentSpec,
    pub robot: RobotSpec,
    pub start: Configuration,
    pub goal: Configuration,
    pub eps_goal: f64,
    /// Linear velocity noise bound; the angular bound is a quarter of it.
    pub gamma: f64,
    #[serde(default)]
    pub gains: ControllerGains,
    #[serde(default)]
    pub planner: PlannerSection,
    #[serde(default)]
    pub clustering: ClusteringSection,
    #[serde(default)]
    pub adaptation: AdaptationConfig,
    /// Defaults to the environment bounds with unrestricted orientation.
    #[serde(default)]
    pub sampling: Option<SamplingBounds>,
    #[serde(default)]
    pub execution: ExecutionSection,
}

/// Parses a scenario, reporting schema errors with the offending field path.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::schema(path, e.into_inner().to_string())
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

impl Scenario {
    pub fn space(&self) -> Space {
        self.environment.space
    }

    pub fn planner_params(&self) -> PlannerParams {
        let p = &self.planner;
        PlannerParams {
            n_particles: p.n_particles,
            alpha_p: p.alpha_p,
            alpha_v: p.alpha_v,
            p_goal: p.p_goal,
            eps_goal: self.eps_goal,
            n_attempt: p.n_attempt,
            goal_bias: p.goal_bias,
            connect_cap: p.connect_cap,
            max_iterations: p.max_iterations,
            t_planning: p.t_planning,
        }
    }

    pub fn clustering_config(&self) -> Result<ClusteringConfig> {
        let mut cfg = ClusteringConfig::new(self.clustering.method, self.clustering.wcr_threshold, self.eps_goal)?;
        if let Some(r) = self.clustering.refine_threshold {
            cfg.refine_threshold = r;
            cfg.validate()?;
        }
        Ok(cfg)
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        NoiseModel::from_gamma(self.gamma)
    }

    pub fn sampling_bounds(&self) -> SamplingBounds {
        self.sampling.unwrap_or_else(|| {
            let b = self.environment.bounds;
            SamplingBounds {
                space: self.space(),
                lower: b.min,
                upper: b.max,
                rotation: match self.space() {
                    Space::Se2 => RotationRange::Planar {
                        min: -std::f64::consts::PI,
                        max: std::f64::consts::PI,
                    },
                    Space::Se3 => RotationRange::Uniform,
                },
            }
        })
    }

    pub fn robot_model(&self) -> Result<RobotModel> {
        let r = &self.robot;
        let space = self.space();
        if r.boxes.is_empty() {
            return RobotModel::new(space, r.points.clone(), r.actuation_centers.clone());
        }
        let sampled = RobotModel::from_boxes(space, &r.boxes, r.spacing, r.actuation_centers.clone())?;
        if r.points.is_empty() {
            return Ok(sampled);
        }
        let mut points = sampled.points;
        points.extend(r.points.iter().copied());
        RobotModel::new(space, points, r.actuation_centers.clone())
    }

    /// Environment seen during execution: planning obstacles plus blocked and extra boxes.
    pub fn execution_environment(&self) -> Result<EnvironmentSpec> {
        let mut spec = self.environment.clone();
        let mut added = Vec::new();
        for id in &self.execution.blocked {
            let b = self
                .execution
                .blockable
                .iter()
                .find(|b| &b.id == id)
                .ok_or_else(|| Error::usage(format!("unknown blockable box `{id}`")))?;
            added.push(b.aabb);
        }
        added.extend(self.execution.extra_obstacles.iter().copied());
        // Regions describe planning-time free space; drop any that new obstacles cover.
        spec.regions
            .retain(|r| !added.iter().any(|o| self.footprint(o).overlaps(&self.footprint(&r.aabb))));
        spec.obstacles.extend(added);
        Ok(spec)
    }

    /// The box as occupied space: SE(2) boxes extend over the whole z range.
    pub fn footprint(&self, b: &Aabb) -> Aabb {
        match self.space() {
            Space::Se2 => Aabb::new(Vector3::new(b.min.x, b.min.y, -1.0), Vector3::new(b.max.x, b.max.y, 1.0)),
            Space::Se3 => *b,
        }
    }

    /// Ids of blockable boxes crossed by the polyline through the translations of `path`.
    pub fn blockables_crossed(&self, path: &[Configuration]) -> Vec<String> {
        self.execution
            .blockable
            .iter()
            .filter(|b| {
                let fp = self.footprint(&b.aabb);
                match path {
                    [] => false,
                    [q] => fp.contains(q.translation()),
                    _ => path.windows(2).any(|w| fp.intersects_segment(w[0].translation(), w[1].translation())),
                }
            })
            .map(|b| b.id.clone())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let space = self.space();
        if self.start.space() != space || self.goal.space() != space {
            return Err(Error::usage("start and goal must live in the environment's space"));
        }
        if !self.environment.bounds.contains(self.goal.translation()) {
            return Err(Error::usage("goal lies outside the environment bounds"));
        }
        if !(self.eps_goal > 0.0) {
            return Err(Error::usage("eps_goal must be positive"));
        }
        self.noise()?;
        self.gains.validate()?;
        self.execution.detector.validate()?;
        self.planner_params().validate()?;
        self.adaptation.validate()?;
        self.clustering_config()?;
        for id in &self.execution.blocked {
            if !self.execution.blockable.iter().any(|b| &b.id == id) {
                return Err(Error::usage(format!("unknown blockable box `{id}`")));
            }
        }
        Ok(())
    }

    /// Builds the planning world and checks that the start is collision-free.
    pub fn build(&self) -> Result<World> {
        World::new(self, &self.environment)
    }

    pub fn build_execution_world(&self) -> Result<World> {
        World::new(self, &self.execution_environment()?)
    }
}

/// A scenario's simulator with the environment and robot it was built from.
pub struct World {
    pub sim: Simulator,
}

impl World {
    fn new(scenario: &Scenario, spec: &EnvironmentSpec) -> Result<Self> {
        let env = VoxelEnvironment::build(spec)?;
        let robot = scenario.robot_model()?;
        let metric = SpaceMetric::for_robot_radius(robot.bounding_radius)?;
        let sim = Simulator::new(Arc::new(env), Arc::new(robot), scenario.gains, metric, scenario.eps_goal)?;
        if sim.max_penetration(&scenario.start) > sim.resolution_settings().tolerance {
            return Err(Error::usage("start configuration is in collision"));
        }
        Ok(Self { sim })
    }

    pub fn cluster_context(&self, eps_goal: f64) -> ClusterContext<'_> {
        ClusterContext { sim: &self.sim, eps_goal }
    }
}

/// A planner over the scenario's planning world.
pub fn make_planner(scenario: &Scenario, world: &World) -> Result<Planner> {
    let params = scenario.planner_params();
    let start = BeliefState::point(scenario.start, params.n_particles);
    Planner::new(
        world.sim.clone(),
        scenario.noise()?,
        scenario.clustering_config()?,
        params,
        scenario.sampling_bounds(),
        start,
        scenario.goal,
    )
}

/// Executor for `exec_world`, matching beliefs against `plan_world`.
pub fn make_executor<'a>(scenario: &Scenario, plan_world: &'a World, exec_world: &'a World, record_trajectory: bool) -> Result<Executor<'a>> {
    Ok(Executor {
        world: &exec_world.sim,
        noise: scenario.noise()?,
        detector: scenario.execution.detector,
        clustering: scenario.clustering_config()?,
        ctx: plan_world.cluster_context(scenario.eps_goal),
        eps_goal: scenario.eps_goal,
        record_trajectory,
    })
}
