//! Partial policy over the planner's solution set and its adaptive execution.
//!
//! Vertices are solution nodes plus nodes observed during execution. Each edge
//! keeps success/attempt counters seeded from planning-time simulations; the
//! executor shifts them by `a_importance` per real outcome and reroutes with
//! Dijkstra from the goal set.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{BeliefMatcher, ClusterContext, ClusteringConfig};
use crate::error::{Error, Result};
use crate::planner::{effective_probability, SolutionSet};
use crate::simulator::{Outcome, Simulator, StuckDetector};
use crate::spaces::{BeliefState, Configuration, NoiseModel};

/// Cost multiplier for edges whose attempt estimate hit the cap.
pub const CAPPED_PENALTY: f64 = 1e6;

/// Index of the start marker in the action table.
pub const START_ACTION: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationConfig {
    pub a_importance: u64,
    pub p_goal: f64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            a_importance: 500,
            p_goal: 0.51,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.a_importance == 0 {
            return Err(Error::usage("a_importance must be at least 1"));
        }
        if !(self.p_goal > 0.0 && self.p_goal <= 1.0) {
            return Err(Error::usage("p_goal must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "target")]
pub enum Action {
    Start,
    MoveTo(Configuration),
}

impl Action {
    pub fn target(&self) -> Option<&Configuration> {
        match self {
            Action::Start => None,
            Action::MoveTo(q) => Some(q),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "node")]
pub enum VertexSource {
    Planned(usize),
    Observed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub belief: BeliefState,
    /// Action whose outcome this vertex represents.
    pub action: usize,
    pub source: VertexSource,
    pub expectation: Configuration,
}

impl Vertex {
    pub fn new(belief: BeliefState, action: usize, source: VertexSource) -> Self {
        let expectation = belief.expect();
        Self {
            belief,
            action,
            source,
            expectation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Forward,
    Reverse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub action: usize,
    pub kind: EdgeKind,
    pub successes: u64,
    pub attempts: u64,
    /// Chance a failed attempt can be undone before retrying.
    pub reversibility: f64,
    pub probability: f64,
    pub attempts_estimate: usize,
    pub capped: bool,
    /// `None` for zero-probability edges, which are left out of routing.
    pub cost: Option<f64>,
}

impl Edge {
    pub fn new(from: usize, to: usize, action: usize, kind: EdgeKind, successes: u64, attempts: u64, reversibility: f64) -> Self {
        Self {
            from,
            to,
            action,
            kind,
            successes,
            attempts,
            reversibility,
            probability: 0.0,
            attempts_estimate: 0,
            capped: false,
            cost: None,
        }
    }

    fn refresh(&mut self, settings: &PolicySettings) {
        self.probability = if self.attempts == 0 {
            0.0
        } else {
            self.successes as f64 / self.attempts as f64
        };
        if self.probability > 0.0 {
            let (k, capped) = attempts_estimate(self.probability, self.reversibility, settings.p_goal, settings.n_attempt);
            self.attempts_estimate = k;
            self.capped = capped;
            let penalty = if capped { CAPPED_PENALTY } else { 1.0 };
            self.cost = Some(k as f64 / self.probability * penalty);
        } else {
            self.attempts_estimate = settings.n_attempt;
            self.capped = true;
            self.cost = None;
        }
    }

    /// Records a reached outcome.
    pub fn increase_probability(&mut self, a_importance: u64) -> f64 {
        self.successes += a_importance;
        self.attempts += a_importance;
        self.successes as f64 / self.attempts as f64
    }

    /// Records that another outcome was reached instead.
    pub fn reduce_probability(&mut self, a_importance: u64) -> f64 {
        self.attempts += a_importance;
        self.successes as f64 / self.attempts as f64
    }
}

/// Smallest attempt count reaching `p_goal` given per-try success `p` and
/// reversal chance `r`. Returns `(cap, true)` if the cap is not enough.
pub fn attempts_estimate(p: f64, r: f64, p_goal: f64, cap: usize) -> (usize, bool) {
    let mut at = 1.0;
    let mut reached = 0.0;
    for k in 1..=cap {
        reached += at * p;
        at *= (1.0 - p) * r;
        if reached >= p_goal {
            return (k, false);
        }
    }
    (cap, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySettings {
    pub a_importance: u64,
    pub p_goal: f64,
    pub n_attempt: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyGraph {
    pub settings: PolicySettings,
    pub actions: Vec<Action>,
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub goals: BTreeSet<usize>,
    pub goal_config: Configuration,
    /// Cost-to-goal per vertex; `None` when no route exists.
    pub distance: Vec<Option<f64>>,
    /// Edge to follow from each vertex on its cheapest route.
    pub next_edge: Vec<Option<usize>>,
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    cost: f64,
    vertex: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PolicyGraph {
    /// Assembles a graph from explicit parts and computes costs and routes.
    pub fn from_parts(
        settings: PolicySettings,
        actions: Vec<Action>,
        vertices: Vec<Vertex>,
        edges: Vec<Edge>,
        goals: BTreeSet<usize>,
        goal_config: Configuration,
    ) -> Result<Self> {
        if actions.first() != Some(&Action::Start) {
            return Err(Error::usage("action table must start with the start marker"));
        }
        if goals.is_empty() {
            return Err(Error::Construction("policy has no goal vertex".into()));
        }
        let nv = vertices.len();
        if goals.iter().any(|&g| g >= nv)
            || edges.iter().any(|e| e.from >= nv || e.to >= nv || e.action >= actions.len())
            || vertices.iter().any(|v| v.action >= actions.len())
        {
            return Err(Error::usage("policy graph references a missing vertex or action"));
        }
        let mut g = Self {
            settings,
            actions,
            vertices,
            edges,
            goals,
            goal_config,
            distance: Vec::new(),
            next_edge: Vec::new(),
        };
        g.rebuild();
        Ok(g)
    }

    /// Builds the policy from every node on a solution path.
    pub fn build(set: &SolutionSet, cfg: &AdaptationConfig, n_attempt: usize) -> Result<Self> {
        cfg.validate()?;
        if set.solutions.is_empty() {
            return Err(Error::Construction("solution set is empty".into()));
        }
        let nodes = &set.nodes;
        let members: BTreeSet<usize> = set.solutions.iter().flatten().copied().collect();
        let index: BTreeMap<usize, usize> = members.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut actions = vec![Action::Start];
        let mut vertices = Vec::with_capacity(members.len());
        for &n in &members {
            let node = &nodes[n];
            let action = match node.action {
                Some(q) => intern(&mut actions, Action::MoveTo(q)),
                None => START_ACTION,
            };
            vertices.push(Vertex::new(node.belief.clone(), action, VertexSource::Planned(n)));
        }
        let mut edges = Vec::new();
        for &n in &members {
            let node = &nodes[n];
            let Some(parent) = node.parent else { continue };
            let (Some(&child_v), Some(&parent_v)) = (index.get(&n), index.get(&parent)) else {
                continue;
            };
            // p_transition is cluster size over particle count.
            let attempts = (node.belief.len() as f64 / node.p_transition).round() as u64;
            edges.push(Edge::new(
                parent_v,
                child_v,
                vertices[child_v].action,
                EdgeKind::Forward,
                node.belief.len() as u64,
                attempts,
                node.reversibility(),
            ));
            let back = intern(&mut actions, Action::MoveTo(vertices[parent_v].expectation));
            edges.push(Edge::new(
                child_v,
                parent_v,
                back,
                EdgeKind::Reverse,
                node.reverse_successes as u64,
                node.reverse_attempts as u64,
                0.0,
            ));
        }
        let goals: BTreeSet<usize> = set
            .solutions
            .iter()
            .filter_map(|s| s.last())
            .map(|n| index[n])
            .collect();
        intern(&mut actions, Action::MoveTo(set.goal));
        let settings = PolicySettings {
            a_importance: cfg.a_importance,
            p_goal: cfg.p_goal,
            n_attempt,
        };
        let g = Self::from_parts(settings, actions, vertices, edges, goals, set.goal)?;
        if g.distance.iter().all(Option::is_none) {
            return Err(Error::Construction("no vertex reaches the goal".into()));
        }
        Ok(g)
    }

    pub fn action_id(&self, action: &Action) -> Option<usize> {
        self.actions.iter().position(|a| a == action)
    }

    /// Recomputes edge costs and cheapest routes to the goal set.
    pub fn rebuild(&mut self) {
        let settings = self.settings;
        for e in &mut self.edges {
            e.refresh(&settings);
        }
        let nv = self.vertices.len();
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); nv];
        for (i, e) in self.edges.iter().enumerate() {
            if e.cost.is_some() {
                incoming[e.to].push(i);
            }
        }
        let mut dist: Vec<Option<f64>> = vec![None; nv];
        let mut next: Vec<Option<usize>> = vec![None; nv];
        let mut done = vec![false; nv];
        let mut heap = BinaryHeap::new();
        for &g in &self.goals {
            dist[g] = Some(0.0);
            heap.push(HeapEntry { cost: 0.0, vertex: g });
        }
        while let Some(HeapEntry { cost, vertex }) = heap.pop() {
            if done[vertex] {
                continue;
            }
            done[vertex] = true;
            for &ei in &incoming[vertex] {
                let e = &self.edges[ei];
                if done[e.from] {
                    continue;
                }
                let c = e.cost.expect("routable edge") + cost;
                let better = match dist[e.from] {
                    None => true,
                    Some(d) => c < d || (c == d && next[e.from].is_some_and(|n| ei < n)),
                };
                if better {
                    dist[e.from] = Some(c);
                    next[e.from] = Some(ei);
                    heap.push(HeapEntry { cost: c, vertex: e.from });
                }
            }
        }
        self.distance = dist;
        self.next_edge = next;
    }

    /// Vertex ids along the cheapest route from `v` to a goal vertex.
    pub fn route(&self, v: usize) -> Option<Vec<usize>> {
        self.distance[v]?;
        let mut out = vec![v];
        let mut cur = v;
        while let Some(e) = self.next_edge[cur] {
            cur = self.edges[e].to;
            out.push(cur);
            if out.len() > self.vertices.len() {
                return None;
            }
        }
        Some(out)
    }

    /// Product of current edge probabilities along the cheapest route to the goal.
    pub fn route_probability(&self, v: usize) -> f64 {
        if self.distance[v].is_none() {
            return 0.0;
        }
        let mut p = 1.0;
        let mut cur = v;
        let mut hops = 0;
        while let Some(e) = self.next_edge[cur] {
            p *= self.edges[e].probability;
            cur = self.edges[e].to;
            hops += 1;
            if hops > self.vertices.len() {
                return 0.0;
            }
        }
        p
    }

    /// Effective probability of the first edge on the route, kept for reports.
    pub fn first_edge_effective(&self, v: usize) -> Option<f64> {
        let e = &self.edges[self.next_edge[v]?];
        Some(effective_probability(e.probability, e.reversibility, self.settings.n_attempt))
    }

    /// Action prescribed at `v`: the next route edge, or a move to the goal at goal vertices.
    pub fn policy_action(&self, v: usize) -> Option<usize> {
        if let Some(e) = self.next_edge[v] {
            return Some(self.edges[e].action);
        }
        if self.goals.contains(&v) {
            return self.action_id(&Action::MoveTo(self.goal_config));
        }
        None
    }

    /// Vertices that could result from performing `action`.
    pub fn potential_vertices(&self, action: usize) -> Vec<usize> {
        let mut out: BTreeSet<usize> = self
            .vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| v.action == action)
            .map(|(i, _)| i)
            .collect();
        out.extend(self.edges.iter().filter(|e| e.action == action).map(|e| e.to));
        out.into_iter().collect()
    }

    /// Adds a singleton vertex for an unexpected outcome with a reverse edge to `previous`.
    pub fn insert_observed_node(&mut self, q: Configuration, action: usize, previous: usize) -> usize {
        let id = self.vertices.len();
        self.vertices.push(Vertex::new(BeliefState::point(q, 1), action, VertexSource::Observed));
        let back = intern(&mut self.actions, Action::MoveTo(self.vertices[previous].expectation));
        self.edges.push(Edge::new(id, previous, back, EdgeKind::Reverse, 1, 1, 0.0));
        self.distance.push(None);
        self.next_edge.push(None);
        self.rebuild();
        id
    }
}

fn intern(actions: &mut Vec<Action>, a: Action) -> usize {
    match actions.iter().position(|x| *x == a) {
        Some(i) => i,
        None => {
            actions.push(a);
            actions.len() - 1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Increase,
    Reduce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum ExecEvent {
    ObservedInserted {
        vertex: usize,
        previous: usize,
        config: Configuration,
    },
    ProbabilityUpdate {
        edge: usize,
        kind: UpdateKind,
        probability: f64,
    },
    Matched {
        vertex: usize,
        route_probability: f64,
    },
    ActionIssued {
        vertex: usize,
        action: usize,
        target: Configuration,
    },
    ActionResult {
        outcome: Outcome,
        config: Configuration,
        steps: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "result")]
pub enum QueryResult {
    Act { vertex: usize, action: usize },
    Failure { vertex: usize },
}

/// Executor state between policy queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionState {
    pub current: Option<usize>,
    pub q_current: Configuration,
    pub a_performed: usize,
    pub log: Vec<ExecEvent>,
}

impl ExecutionState {
    pub fn new(q_start: Configuration) -> Self {
        Self {
            current: None,
            q_current: q_start,
            a_performed: START_ACTION,
            log: Vec::new(),
        }
    }
}

/// Vertices whose belief absorbs `q` as a single cluster.
fn matching_vertices(
    g: &PolicyGraph,
    candidates: &[usize],
    q: &Configuration,
    clustering: &ClusteringConfig,
    ctx: &ClusterContext,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for &v in candidates {
        let belief = g.vertices[v].belief.particles();
        if BeliefMatcher::new(belief, clustering, ctx)?.matches(q) {
            out.push(v);
        }
    }
    Ok(out)
}

/// Locates the robot in the policy graph, adapts edge probabilities and picks the next action.
pub fn policy_query(
    g: &mut PolicyGraph,
    state: &mut ExecutionState,
    clustering: &ClusteringConfig,
    ctx: &ClusterContext,
) -> Result<QueryResult> {
    let q = state.q_current;
    let a = state.a_performed;
    let candidates = g.potential_vertices(a);
    let mut matching = matching_vertices(g, &candidates, &q, clustering, ctx)?;
    if matching.is_empty() {
        let previous = state
            .current
            .ok_or_else(|| Error::usage("start configuration matches no start vertex"))?;
        let v = g.insert_observed_node(q, a, previous);
        state.log.push(ExecEvent::ObservedInserted {
            vertex: v,
            previous,
            config: q,
        });
        matching.push(v);
    }
    let reached = *matching
        .iter()
        .min_by(|&&x, &&y| {
            let dx = g.distance[x].unwrap_or(f64::INFINITY);
            let dy = g.distance[y].unwrap_or(f64::INFINITY);
            dx.total_cmp(&dy).then(x.cmp(&y))
        })
        .expect("non-empty");

    if let Some(prev) = state.current {
        let a_imp = g.settings.a_importance;
        let mut changed = false;
        for (i, e) in g.edges.iter_mut().enumerate() {
            if e.from != prev || e.action != a {
                continue;
            }
            let (kind, probability) = if e.to == reached {
                (UpdateKind::Increase, e.increase_probability(a_imp))
            } else {
                (UpdateKind::Reduce, e.reduce_probability(a_imp))
            };
            state.log.push(ExecEvent::ProbabilityUpdate {
                edge: i,
                kind,
                probability,
            });
            changed = true;
        }
        if changed {
            g.rebuild();
        }
    }

    let route_probability = g.route_probability(reached);
    state.log.push(ExecEvent::Matched {
        vertex: reached,
        route_probability,
    });
    state.current = Some(reached);
    if route_probability < g.settings.p_goal {
        return Ok(QueryResult::Failure { vertex: reached });
    }
    match g.policy_action(reached) {
        Some(action) => Ok(QueryResult::Act { vertex: reached, action }),
        None => Ok(QueryResult::Failure { vertex: reached }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecOutcome {
    Success,
    Failure,
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionBudget {
    pub max_actions: usize,
    /// Total controller steps across all actions.
    pub max_sim_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub outcome: ExecOutcome,
    pub actions: usize,
    pub sim_steps: usize,
    pub observed_insertions: usize,
    pub final_config: Configuration,
    /// Vertices matched after each query, in order.
    pub visited: Vec<usize>,
    pub log: Vec<ExecEvent>,
    /// Full controller trajectory when requested.
    pub trajectory: Vec<Configuration>,
}

/// Everything the execution loop needs besides the policy itself.
pub struct Executor<'a> {
    /// Simulator for the world the robot actually moves in.
    pub world: &'a Simulator,
    pub noise: NoiseModel,
    pub detector: StuckDetector,
    pub clustering: ClusteringConfig,
    /// Context used for belief matching (the planner's model of the world).
    pub ctx: ClusterContext<'a>,
    pub eps_goal: f64,
    pub record_trajectory: bool,
}

impl Executor<'_> {
    /// Queries the policy, executes its action with the contact controller and repeats.
    pub fn run<R: Rng + ?Sized>(
        &self,
        g: &mut PolicyGraph,
        q_start: Configuration,
        budget: &ExecutionBudget,
        rng: &mut R,
    ) -> Result<ExecutionResult> {
        let metric = *self.world.metric();
        let mut state = ExecutionState::new(q_start);
        let mut actions = 0;
        let mut sim_steps = 0;
        let mut visited = Vec::new();
        let mut trajectory = if self.record_trajectory { vec![q_start] } else { Vec::new() };
        let outcome = loop {
            if metric.between(&state.q_current, &g.goal_config) <= self.eps_goal {
                break ExecOutcome::Success;
            }
            if actions >= budget.max_actions || sim_steps >= budget.max_sim_steps {
                break ExecOutcome::Timeout;
            }
            let result = policy_query(g, &mut state, &self.clustering, &self.ctx)?;
            let (vertex, action) = match result {
                QueryResult::Act { vertex, action } => (vertex, action),
                QueryResult::Failure { vertex } => {
                    visited.push(vertex);
                    break ExecOutcome::Failure;
                }
            };
            visited.push(vertex);
            let target = *g.actions[action]
                .target()
                .ok_or_else(|| Error::usage("policy selected the start marker as an action"))?;
            state.log.push(ExecEvent::ActionIssued { vertex, action, target });
            let sim = self
                .world
                .contact_motion_execute(&state.q_current, &target, &self.detector, &self.noise, rng);
            actions += 1;
            sim_steps += sim.steps;
            if self.record_trajectory {
                trajectory.extend_from_slice(&sim.trajectory[1..]);
            }
            state.log.push(ExecEvent::ActionResult {
                outcome: sim.outcome,
                config: sim.final_config,
                steps: sim.steps,
            });
            state.q_current = sim.final_config;
            state.a_performed = action;
        };
        let observed_insertions = state
            .log
            .iter()
            .filter(|e| matches!(e, ExecEvent::ObservedInserted { .. }))
            .count();
        Ok(ExecutionResult {
            outcome,
            actions,
            sim_steps,
            observed_insertions,
            final_config: state.q_current,
            visited,
            log: state.log,
            trajectory,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn settings() -> PolicySettings {
        PolicySettings {
            a_importance: 500,
            p_goal: 0.51,
            n_attempt: 50,
        }
    }

    fn vtx(x: f64, action: usize) -> Vertex {
        Vertex::new(BeliefState::point(Configuration::planar(x, 0.0, 0.0), 1), action, VertexSource::Observed)
    }

    fn actions(n: usize) -> Vec<Action> {
        let mut a = vec![Action::Start];
        a.extend((0..n).map(|i| Action::MoveTo(Configuration::planar(i as f64, 1.0, 0.0))));
        a
    }

    #[test]
    fn attempts_estimate_examples() {
        assert_eq!(attempts_estimate(1.0, 0.0, 0.51, 50), (1, false));
        assert_eq!(attempts_estimate(0.3, 1.0, 0.51, 50), (2, false));
        assert_eq!(attempts_estimate(0.3, 0.0, 0.51, 50), (50, true));
    }

    #[test]
    fn update_examples() {
        let mut e = Edge::new(0, 1, 1, EdgeKind::Forward, 5, 10, 1.0);
        assert_eq!(e.increase_probability(500), 505.0 / 510.0);
        let mut e = Edge::new(0, 1, 1, EdgeKind::Forward, 5, 10, 1.0);
        assert_eq!(e.reduce_probability(500), 5.0 / 510.0);
        let mut e = Edge::new(0, 1, 1, EdgeKind::Forward, 0, 10, 1.0);
        assert_eq!(e.reduce_probability(500), 0.0);
        let mut e = Edge::new(0, 1, 1, EdgeKind::Forward, 7, 7, 1.0);
        assert_eq!(e.increase_probability(3), 1.0);
        let mut e = Edge::new(0, 1, 1, EdgeKind::Forward, 5, 10, 1.0);
        assert!(e.increase_probability(u32::MAX as u64) > 1.0 - 1e-8);
        let mut e = Edge::new(0, 1, 1, EdgeKind::Forward, 5, 10, 1.0);
        let mut last = 0.5;
        for _ in 0..20 {
            let p = e.reduce_probability(500);
            assert!(p < last);
            last = p;
        }
    }

    proptest! {
        #[test]
        fn updates_stay_in_unit_interval(s in 0u64..50, extra in 0u64..50, a in 1u64..1000, ops in proptest::collection::vec(any::<bool>(), 0..30)) {
            let mut e = Edge::new(0, 1, 1, EdgeKind::Forward, s, s + extra, 1.0);
            for up in ops {
                let p = if up { e.increase_probability(a) } else { e.reduce_probability(a) };
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn single_edge_policy() {
        let g = PolicyGraph::from_parts(
            settings(),
            actions(1),
            vec![vtx(0.0, 0), vtx(1.0, 1)],
            vec![Edge::new(0, 1, 1, EdgeKind::Forward, 10, 10, 1.0)],
            BTreeSet::from([1]),
            Configuration::planar(1.0, 0.0, 0.0),
        )
        .unwrap();
        assert_eq!(g.edges[0].cost, Some(1.0));
        assert_eq!(g.policy_action(0), Some(1));
        assert_eq!(g.route_probability(0), 1.0);
    }

    #[test]
    fn prefers_more_reliable_branch() {
        // 0 -> 1 -> 3 with p 0.9, 0 -> 2 -> 3 with p 0.5; equal counts.
        let edges = vec![
            Edge::new(0, 1, 1, EdgeKind::Forward, 9, 10, 1.0),
            Edge::new(1, 3, 2, EdgeKind::Forward, 10, 10, 1.0),
            Edge::new(0, 2, 3, EdgeKind::Forward, 5, 10, 1.0),
            Edge::new(2, 3, 4, EdgeKind::Forward, 10, 10, 1.0),
        ];
        let g = PolicyGraph::from_parts(
            settings(),
            actions(4),
            (0..4).map(|i| vtx(i as f64, 0)).collect(),
            edges,
            BTreeSet::from([3]),
            Configuration::planar(3.0, 0.0, 0.0),
        )
        .unwrap();
        assert_eq!(g.route(0), Some(vec![0, 1, 3]));
    }

    /// Minimum over all simple paths, summing costs from the goal end.
    fn brute_force(g: &PolicyGraph, v: usize) -> Option<f64> {
        fn go(g: &PolicyGraph, v: usize, seen: &mut Vec<bool>) -> Option<f64> {
            if g.goals.contains(&v) {
                return Some(0.0);
            }
            let mut best: Option<f64> = None;
            for e in &g.edges {
                if e.from != v || e.cost.is_none() || seen[e.to] {
                    continue;
                }
                seen[e.to] = true;
                if let Some(rest) = go(g, e.to, seen) {
                    let c = e.cost.unwrap() + rest;
                    best = Some(best.map_or(c, |b: f64| b.min(c)));
                }
                seen[e.to] = false;
            }
            best
        }
        let mut seen = vec![false; g.vertices.len()];
        seen[v] = true;
        go(g, v, &mut seen)
    }

    #[test]
    fn diamond_matches_enumeration() {
        let edges = vec![
            Edge::new(0, 1, 1, EdgeKind::Forward, 8, 10, 0.5),
            Edge::new(0, 2, 2, EdgeKind::Forward, 6, 10, 0.9),
            Edge::new(1, 3, 3, EdgeKind::Forward, 3, 10, 1.0),
            Edge::new(2, 3, 4, EdgeKind::Forward, 7, 10, 0.0),
            Edge::new(1, 2, 5, EdgeKind::Forward, 9, 10, 1.0),
            Edge::new(3, 0, 6, EdgeKind::Reverse, 10, 10, 0.0),
        ];
        let g = PolicyGraph::from_parts(
            settings(),
            actions(6),
            (0..4).map(|i| vtx(i as f64, 0)).collect(),
            edges,
            BTreeSet::from([3]),
            Configuration::planar(3.0, 0.0, 0.0),
        )
        .unwrap();
        for v in 0..4 {
            assert_eq!(g.distance[v], brute_force(&g, v));
        }
    }

    pub(crate) fn random_graph(seed: u64) -> PolicyGraph {
        use rand::Rng;
        let mut rng = crate::seeds::rng_from_seed(seed);
        let nv = rng.random_range(2..=10);
        let ne = rng.random_range(1..=nv * 3);
        let edges: Vec<Edge> = (0..ne)
            .map(|i| {
                let attempts = rng.random_range(1..=24u64);
                let successes = rng.random_range(0..=attempts);
                let r = [0.0, 0.5, 1.0][rng.random_range(0..3)];
                Edge::new(rng.random_range(0..nv), rng.random_range(0..nv), i + 1, EdgeKind::Forward, successes, attempts, r)
            })
            .collect();
        let goals: BTreeSet<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(0..nv)).collect();
        PolicyGraph::from_parts(
            settings(),
            actions(ne),
            (0..nv).map(|i| vtx(i as f64, 0)).collect(),
            edges,
            goals,
            Configuration::planar(0.0, 0.0, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn dijkstra_matches_brute_force_on_random_graphs() {
        for seed in 0..200 {
            let g = random_graph(seed);
            for v in 0..g.vertices.len() {
                assert_eq!(g.distance[v], brute_force(&g, v), "seed {seed} vertex {v}");
                if let Some(route) = g.route(v) {
                    assert!(g.goals.contains(route.last().unwrap()));
                }
            }
        }
    }

    #[test]
    fn rebuild_is_idempotent() {
        let g = random_graph(11);
        let mut h = g.clone();
        h.rebuild();
        assert_eq!(g, h);
    }

    #[test]
    fn observed_insertion_and_failed_reverse() {
        let mut g = PolicyGraph::from_parts(
            settings(),
            actions(1),
            vec![vtx(0.0, 0), vtx(1.0, 1)],
            vec![Edge::new(0, 1, 1, EdgeKind::Forward, 24, 24, 1.0)],
            BTreeSet::from([1]),
            Configuration::planar(1.0, 0.0, 0.0),
        )
        .unwrap();
        let o1 = g.insert_observed_node(Configuration::planar(0.3, 0.0, 0.0), 1, 0);
        let back = g.edges.len() - 1;
        assert_eq!(g.edges[back].probability, 1.0);
        assert_eq!(g.policy_action(o1), Some(g.edges[back].action));
        assert_eq!(g.edges[back].reduce_probability(500), 1.0 / 501.0);
        g.rebuild();
        let mut prev = o1;
        let mut path = 1.0 / 501.0;
        for i in 2..=3 {
            let rev = g.edges[g.next_edge[prev].unwrap()].action;
            let o = g.insert_observed_node(Configuration::planar(0.3, 0.0, 0.0), rev, prev);
            let e = g.edges.len() - 1;
            g.edges[e].reduce_probability(500);
            g.rebuild();
            path *= 1.0 / 501.0;
            assert_relative_eq!(g.route_probability(o), path, max_relative = 1e-12);
            assert_eq!(g.route(o).unwrap().len(), i + 2);
            prev = o;
        }
        assert!(path < 0.51);
    }
}
