//! Scenario loading, traces and experiment drivers behind the `cplan` CLI.

pub mod experiment;
pub mod scenario;
pub mod trace;

pub use experiment::{plan_and_execute, Blocking, run_executions, run_plan, sweep, ExperimentReport, GridAxis, Summary};
pub use scenario::{load_scenario, parse_scenario, Scenario, World};
