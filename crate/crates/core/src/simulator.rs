//! Kinematic forward simulation of a compliant, noisy, PD-controlled rigid body.
//!
//! Each step computes a PD control input toward the target, clamps it so the
//! robot's workspace motion stays below half a voxel, adds sampled actuation
//! noise and then pushes any penetrating points back out through a damped
//! least-squares Jacobian solve. [`Simulator::contact_motion_execute`] wraps the
//! same stepping with a stuck detector that nudges the target toward a plane
//! fitted to the recent trajectory.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3, Matrix6, SymmetricEigen, Vector2, Vector3, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{RobotModel, VoxelEnvironment};
use crate::error::{Error, Result};
use crate::spaces::{Configuration, Displacement, NoiseModel, Space, SpaceMetric};

/// Largest per-step workspace motion of any robot point, as a fraction of the voxel size.
const STEP_CLAMP_FRACTION: f64 = 0.5;
const STALL_WINDOW: usize = 25;
const STALL_PROGRESS: f64 = 1e-6;
/// A stalled robot has also not moved over the stall window. Noisy contact motion creeps
/// in fits and starts, so any larger threshold cuts off motion that execution completes.
const STALL_MOTION: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub kp: f64,
    pub kd: f64,
    /// Seconds per simulation step.
    pub timestep: f64,
    /// Simulation budget per action during planning, seconds.
    pub t_simulate: f64,
    /// Execution budget per action, seconds.
    pub t_exec: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            kp: 0.5,
            kd: 0.0,
            timestep: 0.05,
            t_simulate: 5.0,
            t_exec: 5.0,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp > 0.0 && self.kd >= 0.0 && self.timestep > 0.0) {
            return Err(Error::usage("gains need kp > 0, kd >= 0 and timestep > 0"));
        }
        if !(self.t_simulate >= 0.0 && self.t_exec >= 0.0) {
            return Err(Error::usage("time budgets must be non-negative"));
        }
        Ok(())
    }

    pub fn simulate_steps(&self) -> usize {
        (self.t_simulate / self.timestep).round() as usize
    }

    pub fn exec_steps(&self) -> usize {
        (self.t_exec / self.timestep).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionSettings {
    pub max_iters: usize,
    pub damping: f64,
    /// Penetration depth still accepted as "in contact".
    pub tolerance: f64,
}

impl Default for ResolutionSettings {
    fn default() -> Self {
        Self {
            max_iters: 50,
            damping: 1e-6,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    BudgetExhausted,
    CompletelyStuck,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub final_config: Configuration,
    /// Every visited configuration, starting with the start configuration.
    /// Empty when recording was disabled.
    pub trajectory: Vec<Configuration>,
    pub outcome: Outcome,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StuckDetector {
    /// Sliding window length in steps.
    pub window: usize,
    /// Net motion over the window below which the robot counts as stuck.
    pub eps_stuck: f64,
    /// Target adjustment fraction per consecutive stuck iteration.
    pub eps_adjust: f64,
}

impl Default for StuckDetector {
    fn default() -> Self {
        Self {
            window: 10,
            eps_stuck: 0.01,
            eps_adjust: 0.01,
        }
    }
}

impl StuckDetector {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::usage("stuck window must be at least 2 steps"));
        }
        if !(self.eps_adjust > 0.0 && self.eps_adjust <= 1.0) {
            return Err(Error::usage("eps_adjust must lie in (0, 1]"));
        }
        if !(self.eps_stuck >= 0.0) {
            return Err(Error::usage("eps_stuck must be non-negative"));
        }
        Ok(())
    }
}

/// Collision resolution exceeded its iteration budget.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolutionFailure {
    pub remaining_depth: f64,
}

/// Result of one simulation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub config: Configuration,
    /// Error used for the derivative term of the next step.
    pub error: Displacement,
    /// Normal of the deepest contact resolved in this step, if any.
    pub contact_normal: Option<Vector3<f64>>,
    /// Resolution failed and the step was reverted.
    pub reverted: bool,
}

/// Forward simulator bound to one environment and robot.
#[derive(Clone, Debug)]
pub struct Simulator {
    env: Arc<VoxelEnvironment>,
    robot: Arc<RobotModel>,
    gains: ControllerGains,
    metric: SpaceMetric,
    resolution: ResolutionSettings,
    convergence_tol: f64,
}

impl Simulator {
    /// `eps_goal` sets the convergence tolerance to a quarter of it.
    pub fn new(
        env: Arc<VoxelEnvironment>,
        robot: Arc<RobotModel>,
        gains: ControllerGains,
        metric: SpaceMetric,
        eps_goal: f64,
    ) -> Result<Self> {
        gains.validate()?;
        if env.space() != robot.space {
            return Err(Error::usage("environment and robot live in different spaces"));
        }
        if !(eps_goal > 0.0) {
            return Err(Error::usage("eps_goal must be positive"));
        }
        Ok(Self {
            env,
            robot,
            gains,
            metric,
            resolution: ResolutionSettings::default(),
            convergence_tol: 0.25 * eps_goal,
        })
    }

    pub fn with_resolution(mut self, resolution: ResolutionSettings) -> Self {
        self.resolution = resolution;
        self
    }

    pub fn env(&self) -> &Arc<VoxelEnvironment> {
        &self.env
    }

    pub fn robot(&self) -> &Arc<RobotModel> {
        &self.robot
    }

    pub fn gains(&self) -> &ControllerGains {
        &self.gains
    }

    pub fn metric(&self) -> &SpaceMetric {
        &self.metric
    }

    pub fn space(&self) -> Space {
        self.robot.space
    }

    pub fn convergence_tol(&self) -> f64 {
        self.convergence_tol
    }

    pub fn resolution_settings(&self) -> &ResolutionSettings {
        &self.resolution
    }

    /// Deepest penetration of any robot point at `q` (0 when free).
    pub fn max_penetration(&self, q: &Configuration) -> f64 {
        self.env
            .check_collision(&self.robot, q)
            .iter()
            .map(|c| c.penetration_depth)
            .fold(0.0, f64::max)
    }

    /// PD control input before clamping.
    fn control(&self, e: &Displacement, e_prev: Option<&Displacement>) -> Displacement {
        let mut u = *e * self.gains.kp;
        if let Some(prev) = e_prev {
            if self.gains.kd > 0.0 {
                u = u + (*e - *prev) * (self.gains.kd / self.gains.timestep);
            }
        }
        let limit = STEP_CLAMP_FRACTION * self.env.resolution();
        let bound = u.workspace_bound(self.robot.bounding_radius);
        if bound > limit {
            u = u * (limit / bound);
        }
        u
    }

    /// One PD step toward `q_target` with noise and collision resolution.
    /// `e_prev` is the error returned by the previous step (none on the first step).
    pub fn simulate_step<R: Rng + ?Sized>(
        &self,
        q_t: &Configuration,
        q_target: &Configuration,
        e_prev: Option<&Displacement>,
        noise: &NoiseModel,
        rng: &mut R,
    ) -> Step {
        let e = q_t.displacement_to(q_target);
        let u = self.control(&e, e_prev);
        let r = noise.sample(self.space(), rng) * self.gains.timestep;
        let moved = q_t.apply(&(u + r));
        match self.resolve_with_normal(&moved) {
            Ok((config, contact_normal)) => Step {
                config,
                error: e,
                contact_normal,
                reverted: false,
            },
            Err(_) => Step {
                config: *q_t,
                error: e,
                contact_normal: None,
                reverted: true,
            },
        }
    }

    /// Iteratively pushes penetrating points out along their surface normals.
    pub fn resolve_collisions(&self, q: &Configuration) -> std::result::Result<Configuration, ResolutionFailure> {
        self.resolve_with_normal(q).map(|(q, _)| q)
    }

    fn resolve_with_normal(
        &self,
        q: &Configuration,
    ) -> std::result::Result<(Configuration, Option<Vector3<f64>>), ResolutionFailure> {
        let tol = self.resolution.tolerance;
        let mut q = *q;
        let mut normal = None;
        for _ in 0..self.resolution.max_iters {
            let contacts = self.env.check_collision(&self.robot, &q);
            let deepest = contacts
                .iter()
                .max_by(|a, b| a.penetration_depth.total_cmp(&b.penetration_depth));
            let Some(deepest) = deepest else {
                return Ok((q, normal));
            };
            if deepest.penetration_depth <= tol {
                return Ok((q, normal.or(Some(deepest.surface_normal))));
            }
            normal = Some(deepest.surface_normal);
            let mut jtj = Matrix6::<f64>::zeros();
            let mut jtb = Vector6::<f64>::zeros();
            for c in &contacts {
                let r = q.transform_point(&self.robot.points[c.point_index]) - q.translation();
                let dp = c.surface_normal * (c.penetration_depth + 0.5 * tol);
                // Rows of [I | -skew(r)].
                let rows = [
                    [1.0, 0.0, 0.0, 0.0, r.z, -r.y],
                    [0.0, 1.0, 0.0, -r.z, 0.0, r.x],
                    [0.0, 0.0, 1.0, r.y, -r.x, 0.0],
                ];
                for (k, row) in rows.iter().enumerate() {
                    let jr = Vector6::from_row_slice(row);
                    jtj += jr * jr.transpose();
                    jtb += jr * dp[k];
                }
            }
            if self.space() == Space::Se2 {
                // Keep planar motion planar.
                for i in [2usize, 3, 4] {
                    for j in 0..6 {
                        jtj[(i, j)] = 0.0;
                        jtj[(j, i)] = 0.0;
                    }
                    jtb[i] = 0.0;
                }
            }
            for i in 0..6 {
                jtj[(i, i)] += self.resolution.damping;
            }
            let dq = match jtj.cholesky() {
                Some(ch) => ch.solve(&jtb),
                None => {
                    return Err(ResolutionFailure {
                        remaining_depth: deepest.penetration_depth,
                    })
                }
            };
            let d = Displacement {
                linear: Vector3::new(dq[0], dq[1], dq[2]),
                angular: Vector3::new(dq[3], dq[4], dq[5]),
            };
            q = q.apply(&d);
        }
        let remaining = self.max_penetration(&q);
        if remaining <= tol {
            Ok((q, normal))
        } else {
            Err(ResolutionFailure {
                remaining_depth: remaining,
            })
        }
    }

    /// Simulates toward `q_target` for at most `t_simulate`, recording the trajectory.
    pub fn simulate_motion<R: Rng + ?Sized>(
        &self,
        q_start: &Configuration,
        q_target: &Configuration,
        noise: &NoiseModel,
        rng: &mut R,
    ) -> SimResult {
        self.simulate_motion_with(q_start, q_target, noise, self.gains.simulate_steps(), true, rng)
    }

    /// [`simulate_motion`](Self::simulate_motion) with an explicit step budget and optional recording.
    pub fn simulate_motion_with<R: Rng + ?Sized>(
        &self,
        q_start: &Configuration,
        q_target: &Configuration,
        noise: &NoiseModel,
        max_steps: usize,
        record: bool,
        rng: &mut R,
    ) -> SimResult {
        let mut q = *q_start;
        let mut trajectory = Vec::new();
        if record {
            trajectory.push(q);
        }
        let mut e_prev: Option<Displacement> = None;
        let mut best = self.metric.between(&q, q_target);
        let mut best_step = 0usize;
        // Recent configurations, so sliding away from the target is not mistaken for a stall.
        let mut recent = VecDeque::with_capacity(STALL_WINDOW + 1);
        recent.push_back(q);
        let mut outcome = Outcome::BudgetExhausted;
        let mut steps = 0;
        if best < self.convergence_tol {
            outcome = Outcome::Converged;
        } else {
            while steps < max_steps {
                let step = self.simulate_step(&q, q_target, e_prev.as_ref(), noise, rng);
                steps += 1;
                q = step.config;
                e_prev = Some(step.error);
                if record {
                    trajectory.push(q);
                }
                if recent.len() > STALL_WINDOW {
                    recent.pop_front();
                }
                recent.push_back(q);
                let d = self.metric.between(&q, q_target);
                if d < self.convergence_tol {
                    outcome = Outcome::Converged;
                    break;
                }
                if d < best - STALL_PROGRESS {
                    best = d;
                    best_step = steps;
                } else if steps - best_step >= STALL_WINDOW && self.metric.between(&recent[0], &q) < STALL_MOTION {
                    outcome = Outcome::CompletelyStuck;
                    break;
                }
            }
        }
        SimResult {
            final_config: q,
            trajectory,
            outcome,
            steps,
        }
    }

    /// Execution-time motion with the stuck-detecting contact motion controller.
    pub fn contact_motion_execute<R: Rng + ?Sized>(
        &self,
        q_start: &Configuration,
        q_target: &Configuration,
        detector: &StuckDetector,
        noise: &NoiseModel,
        rng: &mut R,
    ) -> SimResult {
        let max_steps = self.gains.exec_steps();
        let mut q = *q_start;
        let mut trajectory = vec![q];
        let mut e_prev: Option<Displacement> = None;
        let mut target = *q_target;
        let mut stuck_iter = 0usize;
        let mut last_normal: Option<Vector3<f64>> = None;
        let mut steps = 0;
        let mut outcome = Outcome::BudgetExhausted;

        if self.metric.between(&q, q_target) < self.convergence_tol {
            outcome = Outcome::Converged;
        }
        while outcome != Outcome::Converged && steps < max_steps {
            let step = self.simulate_step(&q, &target, e_prev.as_ref(), noise, rng);
            steps += 1;
            q = step.config;
            e_prev = Some(step.error);
            if step.contact_normal.is_some() {
                last_normal = step.contact_normal;
            }
            trajectory.push(q);
            if self.metric.between(&q, q_target) < self.convergence_tol {
                outcome = Outcome::Converged;
                break;
            }
            if trajectory.len() <= detector.window {
                continue;
            }
            let window = &trajectory[trajectory.len() - 1 - detector.window..];
            let motion = self.metric.between(&window[0], &window[window.len() - 1]);
            if motion >= detector.eps_stuck {
                if stuck_iter > 0 {
                    stuck_iter = 0;
                    target = *q_target;
                    e_prev = None;
                }
                continue;
            }
            stuck_iter += 1;
            let factor = stuck_iter as f64 * detector.eps_adjust;
            if factor >= 1.0 - 1e-12 {
                outcome = Outcome::CompletelyStuck;
                break;
            }
            let plane = fit_plane(window, q_target.translation()).or_else(|| {
                let n = last_normal?;
                Some((centroid(window), n))
            });
            let Some((point, normal)) = plane else {
                outcome = Outcome::CompletelyStuck;
                break;
            };
            let t = q_target.translation();
            let offset = normal * ((point - t).dot(&normal) / normal.dot(&normal)) * factor;
            target = q_target.with_translation(t + offset);
            e_prev = None;
        }
        SimResult {
            final_config: q,
            trajectory,
            outcome,
            steps,
        }
    }
}

fn centroid(window: &[Configuration]) -> Vector3<f64> {
    window.iter().map(|c| *c.translation()).sum::<Vector3<f64>>() / window.len() as f64
}

/// Fits a plane (a line for SE(2)) to the translations of `window`.
///
/// Returns the centroid and the unit normal of least spread, oriented toward
/// `toward`. `None` when the window is too short or all points coincide.
pub fn fit_plane(window: &[Configuration], toward: &Vector3<f64>) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let space = window.first()?.space();
    let min_len = if space == Space::Se2 { 2 } else { 3 };
    if window.len() < min_len {
        return None;
    }
    let c = centroid(window);
    let spread = window
        .iter()
        .map(|q| (q.translation() - c).norm())
        .fold(0.0, f64::max);
    if spread < 1e-9 {
        return None;
    }
    let mut normal = match space {
        Space::Se2 => {
            let mut cov = Matrix2::zeros();
            for q in window {
                let d = Vector2::new(q.translation().x - c.x, q.translation().y - c.y);
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let k = eig.eigenvalues.imin();
            let n = eig.eigenvectors.column(k);
            Vector3::new(n[0], n[1], 0.0)
        }
        Space::Se3 => {
            let mut cov = Matrix3::zeros();
            for q in window {
                let d = q.translation() - c;
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let k = eig.eigenvalues.imin();
            eig.eigenvectors.column(k).into_owned()
        }
    };
    normal /= normal.norm();
    if normal.dot(&(toward - c)) < 0.0 {
        normal = -normal;
    }
    Some((c, normal))
}
