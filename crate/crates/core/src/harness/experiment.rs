//! Plan/execute/sweep drivers and their reports.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{make_executor, make_planner, Scenario, World};
use crate::error::{Error, Result};
use crate::planner::SolutionSet;
use crate::policy::{ExecOutcome, ExecutionBudget, ExecutionResult, PolicyGraph};
use crate::seeds;

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} [{:.2}]", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub index: usize,
    pub seed: u64,
    pub solutions: usize,
    pub nodes: usize,
    pub iterations: usize,
    pub first_solution_iteration: Option<usize>,
    /// Blockable boxes crossed by the policy's initial route.
    pub initial_route_crosses: Vec<String>,
    /// Boxes blocked while executing this plan.
    pub blocked: Vec<String>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Index of the plan this run executed, if the report has plans.
    pub plan: Option<usize>,
    pub run: usize,
    pub seed: u64,
    pub outcome: ExecOutcome,
    pub actions: usize,
    pub sim_steps: usize,
    pub observed_insertions: usize,
    /// Blockable boxes the robot passed through.
    pub crossed: Vec<String>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub label: String,
    pub plans: Vec<PlanRecord>,
    pub runs: Vec<RunRecord>,
    /// Fraction of plans that found a solution.
    pub p_plan: Option<Summary>,
    /// Per-plan execution success rate (per-run when there are no plans).
    pub p_exec: Option<Summary>,
    /// Actions per successful run.
    pub actions: Option<Summary>,
}

impl ExperimentReport {
    pub fn new(label: impl Into<String>, plans: Vec<PlanRecord>, runs: Vec<RunRecord>) -> Self {
        let mut r = Self {
            label: label.into(),
            plans,
            runs,
            p_plan: None,
            p_exec: None,
            actions: None,
        };
        r.recompute();
        r
    }

    /// Recomputes the aggregates from the raw records.
    pub fn recompute(&mut self) {
        let ok = |o: ExecOutcome| if o == ExecOutcome::Success { 1.0 } else { 0.0 };
        self.p_plan = Summary::of(
            &self
                .plans
                .iter()
                .map(|p| if p.solutions > 0 { 1.0 } else { 0.0 })
                .collect::<Vec<_>>(),
        );
        self.p_exec = if self.plans.is_empty() {
            Summary::of(&self.runs.iter().map(|r| ok(r.outcome)).collect::<Vec<_>>())
        } else {
            let rates: Vec<f64> = self
                .plans
                .iter()
                .filter_map(|p| {
                    let runs: Vec<f64> = self
                        .runs
                        .iter()
                        .filter(|r| r.plan == Some(p.index))
                        .map(|r| ok(r.outcome))
                        .collect();
                    Summary::of(&runs).map(|s| s.mean)
                })
                .collect();
            Summary::of(&rates)
        };
        self.actions = Summary::of(
            &self
                .runs
                .iter()
                .filter(|r| r.outcome == ExecOutcome::Success)
                .map(|r| r.actions as f64)
                .collect::<Vec<_>>(),
        );
    }

    /// Fraction of all runs that succeeded.
    pub fn success_rate(&self) -> Option<f64> {
        if self.runs.is_empty() {
            return None;
        }
        Some(self.runs.iter().filter(|r| r.outcome == ExecOutcome::Success).count() as f64 / self.runs.len() as f64)
    }

    /// Copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for p in &mut r.plans {
            p.wall_seconds = 0.0;
        }
        for run in &mut r.runs {
            run.wall_seconds = 0.0;
        }
        r
    }

    /// One table row: label, P_plan, P_exec, actions.
    pub fn row(&self) -> String {
        let fmt = |s: &Option<Summary>| s.map_or_else(|| "-".to_string(), |s| s.to_string());
        format!("{}\t{}\t{}\t{}", self.label, fmt(&self.p_plan), fmt(&self.p_exec), fmt(&self.actions))
    }
}

pub struct PlanOutput {
    pub set: SolutionSet,
    pub record: PlanRecord,
}

/// Plans once with `seed`.
pub fn run_plan(scenario: &Scenario, world: &World, index: usize, seed: u64) -> Result<PlanOutput> {
    let started = Instant::now();
    let mut planner = make_planner(scenario, world)?;
    planner.plan(&mut seeds::rng_from_seed(seed))?;
    let set = planner.into_solution_set();
    let record = PlanRecord {
        index,
        seed,
        solutions: set.solutions.len(),
        nodes: set.nodes.len(),
        iterations: set.stats.iterations,
        first_solution_iteration: set.stats.first_solution_iteration,
        initial_route_crosses: Vec::new(),
        blocked: Vec::new(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(PlanOutput { set, record })
}

/// Executes a fresh copy of `policy` `n_runs` times; run `i` uses `derive_seed(seed, i)`.
/// Each run starts from the unadapted policy.
#[allow(clippy::too_many_arguments)]
pub fn run_executions(
    scenario: &Scenario,
    plan_world: &World,
    exec_world: &World,
    policy: &PolicyGraph,
    plan: Option<usize>,
    n_runs: usize,
    seed: u64,
    budget: &ExecutionBudget,
    record_trajectory: bool,
) -> Result<Vec<(RunRecord, ExecutionResult)>> {
    let track = !scenario.execution.blockable.is_empty();
    let executor = make_executor(scenario, plan_world, exec_world, record_trajectory || track)?;
    (0..n_runs)
        .map(|i| {
            let run_seed = seeds::derive_seed(seed, i as u64);
            let started = Instant::now();
            let mut g = policy.clone();
            let mut res = executor.run(&mut g, scenario.start, budget, &mut seeds::rng_from_seed(run_seed))?;
            let crossed = scenario.blockables_crossed(&res.trajectory);
            if !record_trajectory {
                res.trajectory = Vec::new();
            }
            let rec = RunRecord {
                plan,
                run: i,
                seed: run_seed,
                outcome: res.outcome,
                actions: res.actions,
                sim_steps: res.sim_steps,
                observed_insertions: res.observed_insertions,
                crossed,
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            Ok((rec, res))
        })
        .collect()
}

/// Blockable boxes crossed when the policy runs once without noise in the planning world.
pub fn initial_route_crosses(scenario: &Scenario, world: &World, policy: &PolicyGraph) -> Result<Vec<String>> {
    let mut quiet = scenario.clone();
    quiet.gamma = 0.0;
    let executor = make_executor(&quiet, world, world, true)?;
    let mut g = policy.clone();
    let res = executor.run(&mut g, scenario.start, &scenario.execution.budget, &mut seeds::rng_from_seed(0))?;
    Ok(scenario.blockables_crossed(&res.trajectory))
}

/// Which boxes to block during execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blocking {
    /// Only the scenario's own `blocked` list.
    Scenario,
    /// Additionally block the boxes crossed by each policy's initial route.
    InitialRoute,
}

/// Plans with every seed and executes each successful plan `n_exec` times.
pub fn plan_and_execute(
    scenario: &Scenario,
    seeds_list: &[u64],
    n_exec: usize,
    blocking: Blocking,
    label: &str,
) -> Result<ExperimentReport> {
    if seeds_list.is_empty() {
        return Err(Error::usage("at least one seed is required"));
    }
    let plan_world = scenario.build()?;
    let per_seed: Vec<Result<(PlanRecord, Vec<RunRecord>)>> = seeds_list
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut out = run_plan(scenario, &plan_world, i, seed)?;
            if out.set.solutions.is_empty() || n_exec == 0 {
                return Ok((out.record, Vec::new()));
            }
            let policy = PolicyGraph::build(&out.set, &scenario.adaptation, scenario.planner.n_attempt)?;
            let mut exec_scenario = scenario.clone();
            out.record.initial_route_crosses = initial_route_crosses(scenario, &plan_world, &policy)?;
            if blocking == Blocking::InitialRoute {
                for id in &out.record.initial_route_crosses {
                    if !exec_scenario.execution.blocked.contains(id) {
                        exec_scenario.execution.blocked.push(id.clone());
                    }
                }
            }
            out.record.blocked = exec_scenario.execution.blocked.clone();
            let exec_world = exec_scenario.build_execution_world()?;
            let budget = scenario.execution.budget;
            let runs = run_executions(&exec_scenario, &plan_world, &exec_world, &policy, Some(i), n_exec, seed, &budget, false)?;
            Ok((out.record, runs.into_iter().map(|(r, _)| r).collect()))
        })
        .collect();
    let mut plans = Vec::new();
    let mut runs = Vec::new();
    for r in per_seed {
        let (p, rs) = r?;
        plans.push(p);
        runs.extend(rs);
    }
    Ok(ExperimentReport::new(label, plans, runs))
}

/// A parameter that sweeps can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Gamma,
    WcrThreshold,
    NParticles,
    Method,
    AImportance,
    MaxIterations,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gamma" => Self::Gamma,
            "wcr_threshold" | "d_wcr" => Self::WcrThreshold,
            "n_particles" | "particles" => Self::NParticles,
            "method" => Self::Method,
            "a_importance" => Self::AImportance,
            "max_iterations" | "iterations" => Self::MaxIterations,
            _ => return Err(Error::usage(format!("unknown sweep parameter `{s}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub param: SweepParam,
    pub values: Vec<String>,
}

impl std::str::FromStr for GridAxis {
    type Err = Error;
    /// `name=v1,v2,...`
    fn from_str(s: &str) -> Result<Self> {
        let (name, vals) = s
            .split_once('=')
            .ok_or_else(|| Error::usage(format!("grid axis `{s}` must look like name=v1,v2")))?;
        let values: Vec<String> = vals.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::usage(format!("grid axis `{name}` has no values")));
        }
        Ok(Self {
            param: name.trim().parse()?,
            values,
        })
    }
}

fn parse_num<T: std::str::FromStr>(param: SweepParam, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::usage(format!("bad value `{v}` for {param:?}")))
}

/// Applies one grid value to a scenario copy.
pub fn apply_param(scenario: &mut Scenario, param: SweepParam, value: &str) -> Result<()> {
    match param {
        SweepParam::Gamma => scenario.gamma = parse_num(param, value)?,
        SweepParam::WcrThreshold => scenario.clustering.wcr_threshold = parse_num(param, value)?,
        SweepParam::NParticles => scenario.planner.n_particles = parse_num(param, value)?,
        SweepParam::AImportance => scenario.adaptation.a_importance = parse_num(param, value)?,
        SweepParam::MaxIterations => scenario.planner.max_iterations = Some(parse_num(param, value)?),
        SweepParam::Method => {
            scenario.clustering.method = serde_json::from_value(serde_json::Value::String(value.to_string()))
                .map_err(|_| Error::usage(format!("unknown clustering method `{value}`")))?
        }
    }
    Ok(())
}

/// Cartesian product of the grid; one report per grid point.
pub fn sweep(
    scenario: &Scenario,
    grid: &[GridAxis],
    seeds_list: &[u64],
    n_exec: usize,
    blocking: Blocking,
) -> Result<Vec<ExperimentReport>> {
    if grid.is_empty() {
        return Err(Error::usage("sweep grid is empty"));
    }
    if seeds_list.is_empty() {
        return Err(Error::usage("at least one seed is required"));
    }
    let mut points: Vec<Vec<(SweepParam, String)>> = vec![Vec::new()];
    for axis in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.param, v.clone()));
                    q
                })
            })
            .collect();
    }
    points
        .iter()
        .map(|point| {
            let mut s = scenario.clone();
            for (param, v) in point {
                apply_param(&mut s, *param, v)?;
            }
            s.clustering_config()?;
            s.noise()?;
            let label = point
                .iter()
                .map(|(p, v)| format!("{}={v}", serde_json::to_value(p).expect("plain enum").as_str().unwrap_or("?")))
                .collect::<Vec<_>>()
                .join(",");
            plan_and_execute(&s, seeds_list, n_exec, blocking, &label)
        })
        .collect()
}
