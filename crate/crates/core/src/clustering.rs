//! Complete-link agglomerative clustering and the particle clustering passes.
//!
//! Particles are first grouped by a method-specific distance (PC, WCR or AC)
//! and each resulting group is then refined by complete-link clustering on the
//! C-space metric.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{wcr_distance, RegionSignature};
use crate::error::{Error, Result};
use crate::simulator::Simulator;
use crate::spaces::{Configuration, NoiseModel};

/// Symmetric matrix of pairwise distances with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Builds the matrix from `f(i, j)` evaluated for `i < j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i + 1..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Like [`from_fn`](Self::from_fn) but evaluates pairs in parallel.
    pub fn from_fn_par(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let values: Vec<f64> = pairs.par_iter().map(|&(i, j)| f(i, j)).collect();
        let mut m = Self::zeros(n);
        for ((i, j), d) in pairs.into_iter().zip(values) {
            m.set(i, j, d);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`. Diagonal entries stay zero.
    pub fn set(&mut self, i: usize, j: usize, d: f64) {
        if i == j {
            return;
        }
        self.data[i * self.n + j] = d;
        self.data[j * self.n + i] = d;
    }
}

/// Complete-link agglomerative clustering.
///
/// Repeatedly merges the two clusters with the smallest maximum pairwise
/// distance until that distance exceeds `threshold`. Ties go to the pair with
/// the smallest (lower minimum item index, higher minimum item index).
/// Clusters are returned sorted by their smallest member, members ascending.
pub fn complete_link_cluster(dm: &DistanceMatrix, threshold: f64) -> Vec<Vec<usize>> {
    let n = dm.len();
    // Slot i holds the cluster whose smallest member is i.
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut d = dm.data.clone();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if members[i].is_none() {
                continue;
            }
            for j in i + 1..n {
                if members[j].is_none() {
                    continue;
                }
                let dij = d[i * n + j];
                if best.is_none_or(|(_, _, b)| dij < b) {
                    best = Some((i, j, dij));
                }
            }
        }
        let Some((a, b, dist)) = best else { break };
        if dist > threshold {
            break;
        }
        let moved = members[b].take().expect("active slot");
        members[a].as_mut().expect("active slot").extend(moved);
        for k in 0..n {
            if members[k].is_some() && k != a {
                let m = d[a * n + k].max(d[b * n + k]);
                d[a * n + k] = m;
                d[k * n + a] = m;
            }
        }
    }
    members
        .into_iter()
        .flatten()
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect()
}

/// First-pass clustering method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClusteringMethod {
    /// Particle connectivity: pairwise noiseless simulations in both directions.
    #[serde(rename = "PC")]
    ParticleConnectivity,
    /// Weakly convex region signatures.
    #[serde(rename = "WCR")]
    RegionSignature,
    /// Straight-line sweeps of the actuation centers.
    #[serde(rename = "AC")]
    ActuationCenter,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    pub method: ClusteringMethod,
    /// Threshold on the region-signature distance, in [0, 1].
    pub wcr_threshold: f64,
    /// Threshold of the C-space refinement pass, meters.
    pub refine_threshold: f64,
}

impl ClusteringConfig {
    /// Default refinement threshold: twice the goal tolerance.
    pub fn new(method: ClusteringMethod, wcr_threshold: f64, eps_goal: f64) -> Result<Self> {
        let cfg = Self {
            method,
            wcr_threshold,
            refine_threshold: 2.0 * eps_goal,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.wcr_threshold) {
            return Err(Error::usage("wcr_threshold must lie in [0, 1]"));
        }
        if !(self.refine_threshold >= 0.0) {
            return Err(Error::usage("refine_threshold must be non-negative"));
        }
        Ok(())
    }
}

/// Simulator and goal tolerance needed by the clustering distances.
#[derive(Clone, Copy)]
pub struct ClusterContext<'a> {
    pub sim: &'a Simulator,
    pub eps_goal: f64,
}

/// 0 if noiseless simulations in both directions end within `eps_goal` of their targets.
/// Each direction gets a quarter of the planning step budget.
pub fn pc_distance(q1: &Configuration, q2: &Configuration, ctx: &ClusterContext) -> f64 {
    if q1 == q2 {
        return 0.0;
    }
    let steps = ctx.sim.gains().simulate_steps() / 4;
    let noise = NoiseModel::noiseless();
    // Noiseless runs never draw from the stream.
    let mut rng = crate::seeds::rng_from_seed(0);
    let reaches = |a: &Configuration, b: &Configuration, rng: &mut crate::seeds::Rng| {
        let r = ctx.sim.simulate_motion_with(a, b, &noise, steps, false, rng);
        ctx.sim.metric().between(&r.final_config, b) <= ctx.eps_goal
    };
    if reaches(q1, q2, &mut rng) && reaches(q2, q1, &mut rng) {
        0.0
    } else {
        1.0
    }
}

/// 0 if every actuation center can move straight between its positions at `q1` and `q2`.
pub fn ac_distance(q1: &Configuration, q2: &Configuration, sim: &Simulator) -> f64 {
    let env = sim.env();
    let free = sim.robot().actuation_centers.iter().all(|c| {
        let a = q1.transform_point(c);
        let b = q2.transform_point(c);
        env.segment_free(&a, &b)
    });
    if free {
        0.0
    } else {
        1.0
    }
}

fn first_pass(particles: &[Configuration], cfg: &ClusteringConfig, ctx: &ClusterContext) -> Vec<Vec<usize>> {
    let n = particles.len();
    match cfg.method {
        ClusteringMethod::ParticleConnectivity => {
            let dm = DistanceMatrix::from_fn_par(n, |i, j| pc_distance(&particles[i], &particles[j], ctx));
            complete_link_cluster(&dm, 0.0)
        }
        ClusteringMethod::ActuationCenter => {
            let dm = DistanceMatrix::from_fn(n, |i, j| ac_distance(&particles[i], &particles[j], ctx.sim));
            complete_link_cluster(&dm, 0.0)
        }
        ClusteringMethod::RegionSignature => {
            let env = ctx.sim.env();
            let robot = ctx.sim.robot();
            let sigs: Vec<_> = particles.iter().map(|q| env.wcr_signature(robot, q)).collect();
            let dm = DistanceMatrix::from_fn(n, |i, j| {
                wcr_distance(&sigs[i], &sigs[j]).expect("signatures of one robot")
            });
            complete_link_cluster(&dm, cfg.wcr_threshold)
        }
    }
}

/// Two-pass clustering; returns index lists into `particles`, sorted by smallest member.
pub fn cluster_particles(
    particles: &[Configuration],
    cfg: &ClusteringConfig,
    ctx: &ClusterContext,
) -> Result<Vec<Vec<usize>>> {
    if particles.is_empty() {
        return Err(Error::usage("cannot cluster an empty particle set"));
    }
    let metric = ctx.sim.metric();
    let mut out = Vec::new();
    for group in first_pass(particles, cfg, ctx) {
        let dm = DistanceMatrix::from_fn(group.len(), |i, j| {
            metric.between(&particles[group[i]], &particles[group[j]])
        });
        for sub in complete_link_cluster(&dm, cfg.refine_threshold) {
            out.push(sub.into_iter().map(|k| group[k]).collect::<Vec<_>>());
        }
    }
    for c in &mut out {
        c.sort_unstable();
    }
    out.sort_by_key(|c| c[0]);
    Ok(out)
}

/// True if `belief` together with `q` forms a single cluster.
pub fn is_same_state(
    belief: &[Configuration],
    q: &Configuration,
    cfg: &ClusteringConfig,
    ctx: &ClusterContext,
) -> Result<bool> {
    Ok(BeliefMatcher::new(belief, cfg, ctx)?.matches(q))
}

/// Repeated membership tests against one belief.
///
/// Complete-link clustering yields a single cluster exactly when every pairwise
/// distance is within the threshold, so `b ∪ {q}` is one cluster iff the belief
/// is internally consistent under both passes and `q` is within both thresholds
/// of every particle. The internal check is done once.
pub struct BeliefMatcher<'a> {
    belief: &'a [Configuration],
    cfg: ClusteringConfig,
    ctx: ClusterContext<'a>,
    signatures: Vec<RegionSignature>,
    consistent: bool,
}

impl<'a> BeliefMatcher<'a> {
    pub fn new(belief: &'a [Configuration], cfg: &ClusteringConfig, ctx: &ClusterContext<'a>) -> Result<Self> {
        if belief.is_empty() {
            return Err(Error::usage("cannot match against an empty belief"));
        }
        let signatures = if cfg.method == ClusteringMethod::RegionSignature {
            let (env, robot) = (ctx.sim.env(), ctx.sim.robot());
            belief.iter().map(|q| env.wcr_signature(robot, q)).collect()
        } else {
            Vec::new()
        };
        let mut m = Self {
            belief,
            cfg: *cfg,
            ctx: *ctx,
            signatures,
            consistent: true,
        };
        let n = belief.len();
        let metric = ctx.sim.metric();
        let close = (0..n).all(|i| (i + 1..n).all(|j| metric.between(&belief[i], &belief[j]) <= cfg.refine_threshold));
        m.consistent = close && m.method_consistent();
        Ok(m)
    }

    fn method_consistent(&self) -> bool {
        let b = self.belief;
        let n = b.len();
        match self.cfg.method {
            ClusteringMethod::RegionSignature => (0..n).all(|i| {
                (i + 1..n).all(|j| {
                    wcr_distance(&self.signatures[i], &self.signatures[j]).expect("same robot") <= self.cfg.wcr_threshold
                })
            }),
            ClusteringMethod::ActuationCenter => {
                (0..n).all(|i| (i + 1..n).all(|j| ac_distance(&b[i], &b[j], self.ctx.sim) == 0.0))
            }
            ClusteringMethod::ParticleConnectivity => {
                let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
                pairs.par_iter().all(|&(i, j)| pc_distance(&b[i], &b[j], &self.ctx) == 0.0)
            }
        }
    }

    /// True if the belief plus `q` clusters into one group.
    pub fn matches(&self, q: &Configuration) -> bool {
        if !self.consistent {
            return false;
        }
        let metric = self.ctx.sim.metric();
        if self.belief.iter().any(|p| metric.between(p, q) > self.cfg.refine_threshold) {
            return false;
        }
        match self.cfg.method {
            ClusteringMethod::RegionSignature => {
                let s = self.ctx.sim.env().wcr_signature(self.ctx.sim.robot(), q);
                self.signatures
                    .iter()
                    .all(|t| wcr_distance(t, &s).expect("same robot") <= self.cfg.wcr_threshold)
            }
            ClusteringMethod::ActuationCenter => self.belief.iter().all(|p| ac_distance(p, q, self.ctx.sim) == 0.0),
            ClusteringMethod::ParticleConnectivity => {
                self.belief.par_iter().all(|p| pc_distance(p, q, &self.ctx) == 0.0)
            }
        }
    }
}
