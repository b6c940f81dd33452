//! Line-delimited JSON traces of planning and execution runs.
//!
//! Every line is one [`TraceRecord`] tagged by `"record"`. A plan trace holds
//! the header, every tree node in creation order, pruned ids, solution paths
//! and statistics; an execution trace adds the policy and per-run events.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{PlanStats, PlannerNode, SolutionSet};
use crate::policy::{ExecEvent, ExecutionResult, PolicyGraph};
use crate::spaces::Configuration;

pub const TRACE_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Plan,
    Execute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "record")]
pub enum TraceRecord {
    Header {
        format: u32,
        kind: TraceKind,
        scenario: String,
        seed: u64,
    },
    Goal {
        config: Configuration,
    },
    Node(PlannerNode),
    Excluded {
        nodes: Vec<usize>,
    },
    Solution {
        path: Vec<usize>,
    },
    Stats(PlanStats),
    Policy(PolicyGraph),
    Run(RunSummary),
    Event {
        run: usize,
        event: ExecEvent,
    },
    Trajectory {
        run: usize,
        configs: Vec<Configuration>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub outcome: crate::policy::ExecOutcome,
    pub actions: usize,
    pub sim_steps: usize,
    pub observed_insertions: usize,
    pub final_config: Configuration,
}

pub fn write_records<W: Write>(out: &mut W, records: &[TraceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_string(records: &[TraceRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_records(&mut buf, records)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Parses a trace; errors name the line and field path.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(&line);
        let rec = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::schema(format!("line {}: {}", i + 1, e.path()), e.into_inner().to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn plan_records(scenario: &str, seed: u64, set: &SolutionSet) -> Vec<TraceRecord> {
    let mut out = vec![
        TraceRecord::Header {
            format: TRACE_FORMAT,
            kind: TraceKind::Plan,
            scenario: scenario.to_string(),
            seed,
        },
        TraceRecord::Goal { config: set.goal },
    ];
    out.extend(set.nodes.iter().cloned().map(TraceRecord::Node));
    out.push(TraceRecord::Excluded {
        nodes: set.excluded.iter().copied().collect(),
    });
    out.extend(set.solutions.iter().map(|p| TraceRecord::Solution { path: p.clone() }));
    out.push(TraceRecord::Stats(set.stats.clone()));
    out
}

pub fn execution_records(
    scenario: &str,
    seed: u64,
    policy: &PolicyGraph,
    runs: &[(u64, ExecutionResult)],
) -> Vec<TraceRecord> {
    let mut out = vec![
        TraceRecord::Header {
            format: TRACE_FORMAT,
            kind: TraceKind::Execute,
            scenario: scenario.to_string(),
            seed,
        },
        TraceRecord::Policy(policy.clone()),
    ];
    for (run, (seed, r)) in runs.iter().enumerate() {
        out.extend(r.log.iter().map(|e| TraceRecord::Event {
            run,
            event: e.clone(),
        }));
        if !r.trajectory.is_empty() {
            out.push(TraceRecord::Trajectory {
                run,
                configs: r.trajectory.clone(),
            });
        }
        out.push(TraceRecord::Run(RunSummary {
            run,
            seed: *seed,
            outcome: r.outcome,
            actions: r.actions,
            sim_steps: r.sim_steps,
            observed_insertions: r.observed_insertions,
            final_config: r.final_config,
        }));
    }
    out
}

/// Header of a trace, if present.
pub fn header(records: &[TraceRecord]) -> Option<(TraceKind, &str, u64)> {
    records.iter().find_map(|r| match r {
        TraceRecord::Header { kind, scenario, seed, .. } => Some((*kind, scenario.as_str(), *seed)),
        _ => None,
    })
}

/// Reassembles the solution set stored in a plan trace.
pub fn solution_set_from_records(records: &[TraceRecord]) -> Result<SolutionSet> {
    match header(records) {
        Some((TraceKind::Plan, _, _)) => {}
        _ => return Err(Error::usage("not a plan trace")),
    }
    let mut nodes = Vec::new();
    let mut solutions = Vec::new();
    let mut excluded = Default::default();
    let mut goal = None;
    let mut stats = None;
    for r in records {
        match r {
            TraceRecord::Node(n) => {
                if n.id != nodes.len() {
                    return Err(Error::usage(format!("node {} out of order in trace", n.id)));
                }
                nodes.push(n.clone());
            }
            TraceRecord::Solution { path } => solutions.push(path.clone()),
            TraceRecord::Excluded { nodes } => excluded = nodes.iter().copied().collect(),
            TraceRecord::Goal { config } => goal = Some(*config),
            TraceRecord::Stats(s) => stats = Some(s.clone()),
            _ => {}
        }
    }
    if nodes.is_empty() {
        return Err(Error::usage("plan trace has no nodes"));
    }
    if solutions.iter().flatten().any(|&i| i >= nodes.len()) {
        return Err(Error::usage("solution path references a missing node"));
    }
    Ok(SolutionSet {
        nodes,
        solutions,
        excluded,
        goal: goal.ok_or_else(|| Error::usage("plan trace has no goal record"))?,
        stats: stats.unwrap_or_default(),
    })
}
