//! `cplan`: plan, execute, sweep and replay compliant-motion scenarios.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use compliant_planner::clustering::ClusteringMethod;
use compliant_planner::harness::experiment::{initial_route_crosses, run_executions, run_plan, sweep, Blocking, GridAxis};
use compliant_planner::harness::trace::{self, TraceKind, TraceRecord};
use compliant_planner::harness::{load_scenario, ExperimentReport, Scenario};
use compliant_planner::policy::PolicyGraph;
use compliant_planner::seeds;

#[derive(Parser)]
#[command(name = "cplan", version, about = "Belief-space planning for compliant robots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan and write a trace of the tree and its solutions.
    Plan(PlanArgs),
    /// Execute the policy built from a plan trace.
    Execute(ExecuteArgs),
    /// Plan and execute over a parameter grid.
    Sweep(SweepArgs),
    /// Rebuild the policy from a plan trace, or summarize an execution trace.
    Replay(ReplayArgs),
}

/// Scenario overrides shared by all subcommands.
#[derive(Args, Clone)]
struct Overrides {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long, value_parser = parse_method)]
    method: Option<ClusteringMethod>,
    #[arg(long = "d-wcr")]
    d_wcr: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "a-importance")]
    a_importance: Option<u64>,
    /// Planner iteration budget.
    #[arg(long)]
    iterations: Option<usize>,
    /// Planner wall-clock budget in seconds.
    #[arg(long = "plan-time")]
    plan_time: Option<f64>,
    /// Execution budget in actions.
    #[arg(long = "max-actions")]
    max_actions: Option<usize>,
    /// Execution budget in controller steps.
    #[arg(long = "max-steps")]
    max_steps: Option<usize>,
    /// Block a named box of the scenario during execution (repeatable).
    #[arg(long = "block")]
    block: Vec<String>,
    /// Also block the boxes crossed by each policy's initial route.
    #[arg(long = "block-initial-route")]
    block_initial_route: bool,
}

fn parse_method(s: &str) -> Result<ClusteringMethod, String> {
    serde_json::from_value(serde_json::Value::String(s.to_uppercase())).map_err(|_| format!("unknown method `{s}` (PC, WCR, AC)"))
}

impl Overrides {
    fn load(&self) -> anyhow::Result<Scenario> {
        let mut s = load_scenario(&self.scenario).with_context(|| format!("loading {}", self.scenario.display()))?;
        if let Some(n) = self.particles {
            s.planner.n_particles = n;
        }
        if let Some(m) = self.method {
            s.clustering.method = m;
        }
        if let Some(d) = self.d_wcr {
            s.clustering.wcr_threshold = d;
        }
        if let Some(g) = self.gamma {
            s.gamma = g;
        }
        if let Some(a) = self.a_importance {
            s.adaptation.a_importance = a;
        }
        if self.iterations.is_some() || self.plan_time.is_some() {
            s.planner.max_iterations = self.iterations;
            s.planner.t_planning = self.plan_time;
        }
        if let Some(a) = self.max_actions {
            s.execution.budget.max_actions = a;
        }
        if let Some(n) = self.max_steps {
            s.execution.budget.max_sim_steps = n;
        }
        s.execution.blocked.extend(self.block.iter().cloned());
        s.validate()?;
        Ok(s)
    }
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trace output; defaults to `<out dir>/<scenario>-plan-<seed>.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExecuteArgs {
    #[command(flatten)]
    common: Overrides,
    /// Plan trace to build the policy from.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 8)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Execution trace output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report output (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Record full controller trajectories in the trace.
    #[arg(long)]
    trajectories: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Overrides,
    /// Grid axis `name=v1,v2` (repeatable): gamma, wcr_threshold, n_particles, method, a_importance, max_iterations.
    #[arg(long = "grid", required = true)]
    grid: Vec<String>,
    /// Explicit plan seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Derive this many plan seeds from `--seed` when `--seeds` is absent.
    #[arg(long = "n-seeds")]
    n_seeds: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Executions per successful plan.
    #[arg(long, default_value_t = 8)]
    exec: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long = "a-importance", default_value_t = 500)]
    a_importance: u64,
    #[arg(long = "p-goal", default_value_t = 0.51)]
    p_goal: f64,
    #[arg(long = "n-attempt", default_value_t = 50)]
    n_attempt: usize,
    /// Write the rebuilt policy (JSON) here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_dir() -> PathBuf {
    std::env::var_os("CPLAN_OUT_DIR").map_or_else(|| PathBuf::from("."), PathBuf::from)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_trace(path: &Path, records: &[TraceRecord]) -> anyhow::Result<()> {
    let mut w = create(path)?;
    trace::write_records(&mut w, records)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_trace(path: &Path) -> anyhow::Result<Vec<TraceRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(trace::read_records(BufReader::new(f))?)
}

fn cmd_plan(args: &PlanArgs) -> anyhow::Result<ExitCode> {
    let scenario = args.common.load()?;
    let world = scenario.build()?;
    let out = run_plan(&scenario, &world, 0, args.seed)?;
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| out_dir().join(format!("{}-plan-{}.jsonl", scenario.name, args.seed)));
    write_trace(&path, &trace::plan_records(&scenario.name, args.seed, &out.set))?;
    let r = &out.record;
    println!(
        "{}: {} solution(s), {} nodes, {} iterations, {:.1} s -> {}",
        scenario.name,
        r.solutions,
        r.nodes,
        r.iterations,
        r.wall_seconds,
        path.display()
    );
    Ok(if r.solutions == 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn cmd_execute(args: &ExecuteArgs) -> anyhow::Result<ExitCode> {
    let mut scenario = args.common.load()?;
    let records = read_trace(&args.trace)?;
    let set = trace::solution_set_from_records(&records)?;
    if let Some((_, name, _)) = trace::header(&records) {
        if name != scenario.name {
            bail!("trace was planned for scenario `{name}`, not `{}`", scenario.name);
        }
    }
    if set.goal != scenario.goal || set.nodes[0].belief.space() != scenario.space() {
        bail!("trace does not match the scenario's goal or space");
    }
    if set.solutions.is_empty() {
        eprintln!("plan trace has no solutions");
        return Ok(ExitCode::from(2));
    }
    let policy = PolicyGraph::build(&set, &scenario.adaptation, scenario.planner.n_attempt)?;
    let plan_world = scenario.build()?;
    if args.common.block_initial_route {
        for id in initial_route_crosses(&scenario, &plan_world, &policy)? {
            if !scenario.execution.blocked.contains(&id) {
                eprintln!("blocking `{id}` on the initial route");
                scenario.execution.blocked.push(id);
            }
        }
    }
    let exec_world = scenario.build_execution_world()?;
    let runs = run_executions(
        &scenario,
        &plan_world,
        &exec_world,
        &policy,
        None,
        args.runs,
        args.seed,
        &scenario.execution.budget,
        args.trajectories,
    )?;
    let report = ExperimentReport::new(scenario.name.clone(), Vec::new(), runs.iter().map(|(r, _)| r.clone()).collect());
    let results: Vec<_> = runs.into_iter().map(|(r, res)| (r.seed, res)).collect();
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| out_dir().join(format!("{}-exec-{}.jsonl", scenario.name, args.seed)));
    write_trace(&path, &trace::execution_records(&scenario.name, args.seed, &policy, &results))?;
    if let Some(p) = &args.report {
        write_json(p, &report)?;
    }
    println!("label\tP_plan\tP_exec\tactions");
    println!("{}", report.row());
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<ExitCode> {
    let scenario = args.common.load()?;
    let grid = args
        .grid
        .iter()
        .map(|g| g.parse::<GridAxis>())
        .collect::<Result<Vec<_>, _>>()?;
    let seeds_list: Vec<u64> = if !args.seeds.is_empty() {
        args.seeds.clone()
    } else if let Some(n) = args.n_seeds {
        (0..n).map(|i| seeds::derive_seed(args.seed, i)).collect()
    } else {
        bail!("give --seeds or --n-seeds");
    };
    let blocking = if args.common.block_initial_route { Blocking::InitialRoute } else { Blocking::Scenario };
    let reports = sweep(&scenario, &grid, &seeds_list, args.exec, blocking)?;
    println!("label\tP_plan\tP_exec\tactions");
    for r in &reports {
        println!("{}", r.row());
    }
    let path = args
        .report
        .clone()
        .unwrap_or_else(|| out_dir().join(format!("{}-sweep.json", scenario.name)));
    write_json(&path, &reports)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(args: &ReplayArgs) -> anyhow::Result<ExitCode> {
    let records = read_trace(&args.trace)?;
    match trace::header(&records) {
        Some((TraceKind::Plan, name, seed)) => {
            let set = trace::solution_set_from_records(&records)?;
            println!("{name} (seed {seed}): {} nodes, {} solution(s)", set.nodes.len(), set.solutions.len());
            if set.solutions.is_empty() {
                return Ok(ExitCode::from(2));
            }
            let cfg = compliant_planner::policy::AdaptationConfig {
                a_importance: args.a_importance,
                p_goal: args.p_goal,
            };
            let policy = PolicyGraph::build(&set, &cfg, args.n_attempt)?;
            let start = 0;
            let route = policy.route(start).unwrap_or_default();
            println!(
                "policy: {} vertices, {} edges, route from start {:?}, route probability {:.3}",
                policy.vertices.len(),
                policy.edges.len(),
                route,
                policy.route_probability(start)
            );
            if let Some(p) = &args.out {
                write_json(p, &policy)?;
            }
        }
        Some((TraceKind::Execute, name, seed)) => {
            let mut ok = 0;
            let mut total = 0;
            for r in &records {
                if let TraceRecord::Run(run) = r {
                    total += 1;
                    if run.outcome == compliant_planner::policy::ExecOutcome::Success {
                        ok += 1;
                    }
                    println!(
                        "run {}: {:?}, {} actions, {} observed node(s)",
                        run.run, run.outcome, run.actions, run.observed_insertions
                    );
                }
            }
            println!("{name} (seed {seed}): {ok}/{total} successful");
        }
        None => bail!("trace has no header"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Execute(a) => cmd_execute(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
