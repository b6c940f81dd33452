//! Voxel world model, point-sampled robot, contacts and region signatures.
//!
//! Obstacles are unions of axis-aligned boxes. The grid answers the cheap
//! "could this point be inside something" question; penetration depth and
//! contact normal come from the boxes themselves. Everything outside the
//! declared bounds behaves like solid wall.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spaces::{Configuration, Space};

const OVERLAP_EPS: f64 = 1e-9;
/// Thickness of the implicit walls surrounding the bounds.
const BOUNDARY_THICKNESS: f64 = 1e3;

/// Axis-aligned box given by its min and max corners.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|a| self.min[a].is_finite() && self.max[a].is_finite() && self.min[a] <= self.max[a])
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|a| (self.max[a] - self.min[a]).max(0.0)).product()
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    /// True if the point lies inside or on the boundary.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// True if the point lies strictly inside.
    #[inline]
    pub fn contains_strict(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] > self.min[a] && p[a] < self.max[a])
    }

    /// Intersection with positive volume (beyond a tiny tolerance).
    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|a| self.min[a].max(other.min[a]) + OVERLAP_EPS < self.max[a].min(other.max[a]))
    }

    /// True if the closed segment `a`-`b` touches the box (slab test).
    pub fn intersects_segment(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        let d = b - a;
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for axis in 0..3 {
            if d[axis].abs() < 1e-15 {
                if a[axis] < self.min[axis] || a[axis] > self.max[axis] {
                    return false;
                }
                continue;
            }
            let u = (self.min[axis] - a[axis]) / d[axis];
            let v = (self.max[axis] - a[axis]) / d[axis];
            t0 = t0.max(u.min(v));
            t1 = t1.min(u.max(v));
            if t0 > t1 {
                return false;
            }
        }
        true
    }

    pub fn intersection(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = self.min[a].max(other.min[a]);
            out.max[a] = self.max[a].min(other.max[a]);
        }
        out
    }

    /// Box sizes given as center plus half extents.
    pub fn from_center(center: Vector3<f64>, half: Vector3<f64>) -> Self {
        Self::new(center - half, center + half)
    }
}

/// A named, hand-authored weakly convex region of free space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub aabb: Aabb,
}

/// Everything needed to build a [`VoxelEnvironment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub space: Space,
    pub bounds: Aabb,
    pub resolution: f64,
    pub obstacles: Vec<Aabb>,
    pub regions: Vec<Region>,
}

/// A robot point found strictly inside an obstacle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub point_index: usize,
    pub penetration_depth: f64,
    /// Unit direction that moves the point out of the obstacle.
    pub surface_normal: Vector3<f64>,
}

/// Occupancy grid plus per-voxel normals and region labels.
#[derive(Clone, Debug)]
pub struct VoxelEnvironment {
    space: Space,
    bounds: Aabb,
    resolution: f64,
    origin: Vector3<f64>,
    cell: Vector3<f64>,
    dims: [usize; 3],
    /// Obstacle boxes as declared (SE(2) boxes get a fixed z extent).
    obstacles: Vec<Aabb>,
    /// Obstacles plus the implicit boundary walls.
    solids: Vec<Aabb>,
    occupied: Vec<bool>,
    normals: Vec<Vector3<f64>>,
    region_ids: Vec<String>,
    regions: Vec<Aabb>,
    labels: Vec<u64>,
}

fn planarize(b: &Aabb) -> Aabb {
    let mut out = *b;
    out.min.z = -1.0;
    out.max.z = 1.0;
    out
}

impl VoxelEnvironment {
    pub fn build(spec: &EnvironmentSpec) -> Result<Self> {
        if !(spec.resolution > 0.0 && spec.resolution.is_finite()) {
            return Err(Error::usage("resolution must be positive"));
        }
        let space = spec.space;
        let adjust = |b: &Aabb| if space == Space::Se2 { planarize(b) } else { *b };
        let bounds = adjust(&spec.bounds);
        if !bounds.is_valid() || bounds.volume() <= 0.0 {
            return Err(Error::usage("environment bounds must have positive volume"));
        }
        let mut obstacles = Vec::with_capacity(spec.obstacles.len());
        for (i, o) in spec.obstacles.iter().enumerate() {
            let o = adjust(o);
            if !o.is_valid() {
                return Err(Error::usage(format!("obstacle {i} has inverted or non-finite corners")));
            }
            let inside = (0..3).all(|a| o.min[a] >= bounds.min[a] - OVERLAP_EPS && o.max[a] <= bounds.max[a] + OVERLAP_EPS);
            if !inside {
                return Err(Error::usage(format!("obstacle {i} extends outside the bounds")));
            }
            obstacles.push(o);
        }
        if spec.regions.len() > 64 {
            return Err(Error::usage("at most 64 regions are supported"));
        }
        let mut region_ids = Vec::new();
        let mut regions = Vec::new();
        for r in &spec.regions {
            let b = adjust(&r.aabb);
            if !b.is_valid() {
                return Err(Error::usage(format!("region `{}` has inverted corners", r.id)));
            }
            if region_ids.contains(&r.id) {
                return Err(Error::usage(format!("duplicate region id `{}`", r.id)));
            }
            if let Some(i) = obstacles.iter().position(|o| o.overlaps(&b)) {
                return Err(Error::usage(format!("region `{}` overlaps obstacle {i}", r.id)));
            }
            region_ids.push(r.id.clone());
            regions.push(b);
        }

        let mut solids = obstacles.clone();
        let axes = space.workspace_dim();
        for a in 0..axes {
            let mut lo = Aabb::new(
                bounds.min - Vector3::repeat(BOUNDARY_THICKNESS),
                bounds.max + Vector3::repeat(BOUNDARY_THICKNESS),
            );
            let mut hi = lo;
            lo.max[a] = bounds.min[a];
            hi.min[a] = bounds.max[a];
            solids.push(lo);
            solids.push(hi);
        }

        let res = spec.resolution;
        let origin = bounds.min;
        let mut cell = Vector3::repeat(res);
        let mut dims = [0usize; 3];
        for a in 0..3 {
            if a == 2 && space == Space::Se2 {
                cell.z = bounds.max.z - bounds.min.z;
                dims[2] = 1;
            } else {
                dims[a] = (((bounds.max[a] - bounds.min[a]) / res) - 1e-9).ceil().max(1.0) as usize;
            }
        }
        let total = dims[0] * dims[1] * dims[2];
        if total > 50_000_000 {
            return Err(Error::usage(format!("grid of {total} voxels is too large")));
        }

        let mut env = Self {
            space,
            bounds,
            resolution: res,
            origin,
            cell,
            dims,
            obstacles,
            solids,
            occupied: vec![false; total],
            normals: vec![Vector3::zeros(); total],
            region_ids,
            regions,
            labels: vec![0; total],
        };
        env.paint();
        Ok(env)
    }

    fn voxel_box(&self, ix: [usize; 3]) -> Aabb {
        let min = Vector3::new(
            self.origin.x + ix[0] as f64 * self.cell.x,
            self.origin.y + ix[1] as f64 * self.cell.y,
            self.origin.z + ix[2] as f64 * self.cell.z,
        );
        Aabb::new(min, min + self.cell)
    }

    fn index_range(&self, b: &Aabb) -> [(usize, usize); 3] {
        let mut out = [(0, 0); 3];
        for a in 0..3 {
            let lo = ((b.min[a] - self.origin[a]) / self.cell[a]).floor().max(0.0) as usize;
            let hi = (((b.max[a] - self.origin[a]) / self.cell[a]).ceil().max(0.0) as usize).min(self.dims[a]);
            out[a] = (lo.min(self.dims[a]), hi);
        }
        out
    }

    fn flat(&self, ix: [usize; 3]) -> usize {
        (ix[2] * self.dims[1] + ix[1]) * self.dims[0] + ix[0]
    }

    fn paint(&mut self) {
        for (k, o) in self.obstacles.clone().iter().enumerate() {
            let r = self.index_range(o);
            for z in r[2].0..r[2].1 {
                for y in r[1].0..r[1].1 {
                    for x in r[0].0..r[0].1 {
                        let ix = [x, y, z];
                        let vb = self.voxel_box(ix);
                        if !vb.overlaps(o) {
                            continue;
                        }
                        let f = self.flat(ix);
                        if !self.occupied[f] {
                            self.occupied[f] = true;
                            // Interior sample of the overlap, strictly inside obstacle k.
                            let sample = vb.intersection(o).center();
                            self.normals[f] = self.exit(&sample).map(|(_, n)| n).unwrap_or_else(|| {
                                debug_assert!(false, "overlap center of obstacle {k} not inside");
                                Vector3::z()
                            });
                        }
                    }
                }
            }
        }
        for (bit, region) in self.regions.clone().iter().enumerate() {
            let r = self.index_range(region);
            for z in r[2].0..r[2].1 {
                for y in r[1].0..r[1].1 {
                    for x in r[0].0..r[0].1 {
                        let ix = [x, y, z];
                        if self.voxel_box(ix).overlaps(region) {
                            let f = self.flat(ix);
                            self.labels[f] |= 1u64 << bit;
                        }
                    }
                }
            }
        }
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn obstacles(&self) -> &[Aabb] {
        &self.obstacles
    }

    pub fn region_ids(&self) -> &[String] {
        &self.region_ids
    }

    pub fn region_boxes(&self) -> &[Aabb] {
        &self.regions
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    fn voxel_of(&self, p: &Vector3<f64>) -> Option<usize> {
        let mut ix = [0usize; 3];
        for a in 0..3 {
            if a == 2 && self.space == Space::Se2 {
                continue;
            }
            if !(p[a] >= self.bounds.min[a] && p[a] <= self.bounds.max[a]) {
                return None;
            }
            let f = (p[a] - self.origin[a]) / self.cell[a];
            if f >= self.dims[a] as f64 {
                return None;
            }
            ix[a] = f as usize;
        }
        Some(self.flat(ix))
    }

    /// Occupancy of the voxel containing `p`; `None` outside the grid.
    pub fn is_occupied(&self, p: &Vector3<f64>) -> Option<bool> {
        self.voxel_of(p).map(|f| self.occupied[f])
    }

    /// Stored normal of the occupied voxel containing `p`.
    pub fn voxel_normal(&self, p: &Vector3<f64>) -> Option<Vector3<f64>> {
        let f = self.voxel_of(p)?;
        self.occupied[f].then(|| self.normals[f])
    }

    /// Region bitmask of the voxel containing `p` (bit i = `region_ids()[i]`).
    pub fn region_mask(&self, p: &Vector3<f64>) -> u64 {
        self.voxel_of(p).map_or(0, |f| self.labels[f])
    }

    /// True if `p` is strictly inside an obstacle or outside the bounds.
    #[inline]
    pub fn point_in_collision(&self, p: &Vector3<f64>) -> bool {
        match self.voxel_of(p) {
            Some(f) => self.occupied[f] && self.obstacles.iter().any(|o| o.contains_strict(p)),
            None => self.solids.iter().any(|o| o.contains_strict(p)),
        }
    }

    /// Penetration depth and outward normal of a point, or `None` if it is free.
    pub fn penetration(&self, p: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        if let Some(f) = self.voxel_of(p) {
            if !self.occupied[f] {
                return None;
            }
        }
        self.exit(p)
    }

    /// Shortest axis-aligned escape from the union of solids.
    fn exit(&self, p: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let p2 = if self.space == Space::Se2 { Vector3::new(p.x, p.y, 0.0) } else { *p };
        if !self.solids.iter().any(|o| o.contains_strict(&p2)) {
            return None;
        }
        let axes = self.space.workspace_dim();
        let mut best = f64::INFINITY;
        let mut dirs: Vec<Vector3<f64>> = Vec::with_capacity(2);
        for a in 0..axes {
            for sign in [1.0, -1.0] {
                let d = self.march(&p2, a, sign);
                let mut dir = Vector3::zeros();
                dir[a] = sign;
                if d < best - 1e-12 {
                    best = d;
                    dirs.clear();
                    dirs.push(dir);
                } else if (d - best).abs() <= 1e-12 {
                    dirs.push(dir);
                }
            }
        }
        let sum: Vector3<f64> = dirs.iter().sum();
        let n = sum.norm();
        let normal = if n > 1e-12 { sum / n } else { dirs[0] };
        Some((best, normal))
    }

    fn march(&self, p: &Vector3<f64>, axis: usize, sign: f64) -> f64 {
        let mut pos = p[axis];
        loop {
            let mut next = pos;
            for o in &self.solids {
                let inside_others = (0..3).all(|a| a == axis || (p[a] > o.min[a] && p[a] < o.max[a]));
                if !inside_others {
                    continue;
                }
                if sign > 0.0 {
                    if o.min[axis] <= pos && pos < o.max[axis] {
                        next = next.max(o.max[axis]);
                    }
                } else if o.min[axis] < pos && pos <= o.max[axis] {
                    next = next.min(o.min[axis]);
                }
            }
            if next == pos {
                return (pos - p[axis]).abs();
            }
            pos = next;
        }
    }

    /// One contact per robot point strictly inside an obstacle or outside the bounds.
    pub fn check_collision(&self, robot: &RobotModel, q: &Configuration) -> Vec<Contact> {
        let mut out = Vec::new();
        for (i, body) in robot.points.iter().enumerate() {
            let p = q.transform_point(body);
            if let Some((depth, normal)) = self.penetration(&p) {
                if depth > 0.0 {
                    out.push(Contact {
                        point_index: i,
                        penetration_depth: depth,
                        surface_normal: normal,
                    });
                }
            }
        }
        out
    }

    /// Cheap yes/no version of [`check_collision`](Self::check_collision).
    pub fn in_collision(&self, robot: &RobotModel, q: &Configuration) -> bool {
        robot
            .points
            .iter()
            .any(|b| self.point_in_collision(&q.transform_point(b)))
    }

    /// Per-point region bitmasks at `q`.
    pub fn wcr_signature(&self, robot: &RobotModel, q: &Configuration) -> RegionSignature {
        RegionSignature(
            robot
                .points
                .iter()
                .map(|b| self.region_mask(&q.transform_point(b)))
                .collect(),
        )
    }

    /// True if the straight segment between two workspace points stays out of obstacles,
    /// checked at steps of half a voxel.
    pub fn segment_free(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        let len = (b - a).norm();
        let steps = ((len / (0.5 * self.resolution)).ceil() as usize).max(1);
        (0..=steps).all(|k| {
            let t = k as f64 / steps as f64;
            !self.point_in_collision(&(a + (b - a) * t))
        })
    }
}

/// Per-robot-point region bitmasks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegionSignature(pub Vec<u64>);

/// Fraction of points whose region sets do not intersect.
pub fn wcr_distance(s1: &RegionSignature, s2: &RegionSignature) -> Result<f64> {
    if s1.0.len() != s2.0.len() {
        return Err(Error::usage(format!(
            "signatures have different lengths ({} vs {})",
            s1.0.len(),
            s2.0.len()
        )));
    }
    if s1.0.is_empty() {
        return Err(Error::usage("empty region signatures"));
    }
    let disjoint = s1.0.iter().zip(&s2.0).filter(|(a, b)| *a & *b == 0).count();
    Ok(disjoint as f64 / s1.0.len() as f64)
}

/// A rigid robot sampled as body-frame points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub space: Space,
    pub points: Vec<Vector3<f64>>,
    pub actuation_centers: Vec<Vector3<f64>>,
    pub bounding_radius: f64,
}

impl RobotModel {
    pub fn new(space: Space, points: Vec<Vector3<f64>>, actuation_centers: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::usage("robot needs at least one point"));
        }
        let mut points = points;
        let mut centers = actuation_centers;
        if space == Space::Se2 {
            for p in points.iter_mut().chain(centers.iter_mut()) {
                p.z = 0.0;
            }
        }
        if centers.is_empty() {
            centers.push(Vector3::zeros());
        }
        let bounding_radius = points
            .iter()
            .chain(&centers)
            .map(|p| p.norm())
            .fold(0.0, f64::max);
        Ok(Self {
            space,
            points,
            actuation_centers: centers,
            bounding_radius,
        })
    }

    /// Samples the outer surface of a union of body-frame boxes with spacing at most `spacing`.
    /// For SE(2) only the rectangle outlines in the xy plane are sampled.
    pub fn from_boxes(
        space: Space,
        boxes: &[Aabb],
        spacing: f64,
        actuation_centers: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        if boxes.is_empty() || !(spacing > 0.0) {
            return Err(Error::usage("robot needs at least one box and a positive point spacing"));
        }
        let boxes: Vec<Aabb> = if space == Space::Se2 {
            boxes.iter().map(planarize).collect()
        } else {
            boxes.to_vec()
        };
        let mut points: Vec<Vector3<f64>> = Vec::new();
        let mut push = |p: Vector3<f64>| {
            let buried = boxes.iter().any(|b| {
                if space == Space::Se2 {
                    p.x > b.min.x && p.x < b.max.x && p.y > b.min.y && p.y < b.max.y
                } else {
                    b.contains_strict(&p)
                }
            });
            if !buried && !points.iter().any(|q| (q - p).norm() < 1e-9) {
                points.push(p);
            }
        };
        let ticks = |lo: f64, hi: f64| -> Vec<f64> {
            let n = (((hi - lo) / spacing) - 1e-9).ceil().max(1.0) as usize;
            (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
        };
        for b in &boxes {
            match space {
                Space::Se2 => {
                    for x in ticks(b.min.x, b.max.x) {
                        push(Vector3::new(x, b.min.y, 0.0));
                        push(Vector3::new(x, b.max.y, 0.0));
                    }
                    for y in ticks(b.min.y, b.max.y) {
                        push(Vector3::new(b.min.x, y, 0.0));
                        push(Vector3::new(b.max.x, y, 0.0));
                    }
                }
                Space::Se3 => {
                    for axis in 0..3 {
                        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                        for side in [b.min[axis], b.max[axis]] {
                            for s in ticks(b.min[u], b.max[u]) {
                                for t in ticks(b.min[v], b.max[v]) {
                                    let mut p = Vector3::zeros();
                                    p[axis] = side;
                                    p[u] = s;
                                    p[v] = t;
                                    push(p);
                                }
                            }
                        }
                    }
                }
            }
        }
        Self::new(space, points, actuation_centers)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest distance from any point to its nearest neighbour.
    pub fn max_point_gap(&self) -> f64 {
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                self.points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| (q - p).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }
}

fn jacobian_from_world(space: Space, q: &Configuration, world: &Vector3<f64>) -> DMatrix<f64> {
    let r = world - q.translation();
    match space {
        Space::Se2 => DMatrix::from_row_slice(2, 3, &[1.0, 0.0, -r.y, 0.0, 1.0, r.x]),
        Space::Se3 => DMatrix::from_row_slice(
            3,
            6,
            &[
                1.0, 0.0, 0.0, 0.0, r.z, -r.y, //
                0.0, 1.0, 0.0, -r.z, 0.0, r.x, //
                0.0, 0.0, 1.0, r.y, -r.x, 0.0,
            ],
        ),
    }
}

/// Maps a configuration twist to the world velocity of robot point `point_index`.
pub fn point_jacobian(robot: &RobotModel, q: &Configuration, point_index: usize) -> Result<DMatrix<f64>> {
    let body = robot
        .points
        .get(point_index)
        .ok_or_else(|| Error::usage(format!("point index {point_index} out of range")))?;
    if q.space() != robot.space {
        return Err(Error::usage("configuration space does not match the robot"));
    }
    Ok(jacobian_from_world(robot.space, q, &q.transform_point(body)))
}
