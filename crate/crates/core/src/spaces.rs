//! Configuration spaces for planar (SE(2)) and free-flying (SE(3)) rigid bodies.
//!
//! A [`Configuration`] is the particle primitive everything else is built on.
//! Displacements between configurations are expressed as world-frame twists
//! ([`Displacement`]): a linear part in meters and an angular part as a
//! rotation vector in radians. For SE(2) only `linear.x`, `linear.y` and
//! `angular.z` are ever non-zero.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DVector, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Which rigid-body group a configuration lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Se2,
    Se3,
}

impl Space {
    /// Degrees of freedom of the configuration space.
    pub fn dof(self) -> usize {
        match self {
            Space::Se2 => 3,
            Space::Se3 => 6,
        }
    }

    /// Dimension of the workspace the robot moves in.
    pub fn workspace_dim(self) -> usize {
        match self {
            Space::Se2 => 2,
            Space::Se3 => 3,
        }
    }

    /// Number of rotational degrees of freedom.
    pub fn rotation_dim(self) -> usize {
        self.dof() - self.workspace_dim()
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rotation {
    /// Heading angle in radians, wrapped to (-pi, pi].
    Planar(f64),
    Spatial(UnitQuaternion<f64>),
}

/// A rigid-body pose in SE(2) or SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Configuration {
    translation: Vector3<f64>,
    rotation: Rotation,
}

impl Configuration {
    pub fn planar(x: f64, y: f64, theta: f64) -> Self {
        Self {
            translation: Vector3::new(x, y, 0.0),
            rotation: Rotation::Planar(wrap_angle(theta)),
        }
    }

    pub fn spatial(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation: Rotation::Spatial(rotation),
        }
    }

    pub fn space(&self) -> Space {
        match self.rotation {
            Rotation::Planar(_) => Space::Se2,
            Rotation::Spatial(_) => Space::Se3,
        }
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation(&self) -> Rotation {
        self.rotation
    }

    /// Heading angle for planar configurations.
    pub fn angle(&self) -> Option<f64> {
        match self.rotation {
            Rotation::Planar(theta) => Some(theta),
            Rotation::Spatial(_) => None,
        }
    }

    /// Orientation as a unit quaternion (planar headings rotate about +z).
    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        match self.rotation {
            Rotation::Planar(theta) => UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta),
            Rotation::Spatial(q) => q,
        }
    }

    /// Maps a body-frame point into the world frame.
    #[inline]
    pub fn transform_point(&self, body: &Vector3<f64>) -> Vector3<f64> {
        match self.rotation {
            Rotation::Planar(theta) => {
                let (s, c) = theta.sin_cos();
                Vector3::new(
                    c * body.x - s * body.y + self.translation.x,
                    s * body.x + c * body.y + self.translation.y,
                    0.0,
                )
            }
            Rotation::Spatial(q) => q * body + self.translation,
        }
    }

    /// Rotates a body-frame vector into the world frame, without translating it.
    #[inline]
    pub fn rotate_vector(&self, body: &Vector3<f64>) -> Vector3<f64> {
        match self.rotation {
            Rotation::Planar(theta) => {
                let (s, c) = theta.sin_cos();
                Vector3::new(c * body.x - s * body.y, s * body.x + c * body.y, 0.0)
            }
            Rotation::Spatial(q) => q * body,
        }
    }

    /// World-frame twist taking `self` to `other`, i.e. `other - self`.
    pub fn displacement_to(&self, other: &Configuration) -> Displacement {
        let linear = other.translation - self.translation;
        let angular = match (self.rotation, other.rotation) {
            (Rotation::Planar(a), Rotation::Planar(b)) => Vector3::new(0.0, 0.0, wrap_angle(b - a)),
            _ => (other.quaternion() * self.quaternion().inverse()).scaled_axis(),
        };
        Displacement { linear, angular }
    }

    /// Applies a world-frame twist: translation is added, rotation is
    /// left-multiplied by `exp(angular)`.
    pub fn apply(&self, d: &Displacement) -> Configuration {
        match self.rotation {
            Rotation::Planar(theta) => Configuration::planar(
                self.translation.x + d.linear.x,
                self.translation.y + d.linear.y,
                theta + d.angular.z,
            ),
            Rotation::Spatial(q) => {
                let r = UnitQuaternion::from_scaled_axis(d.angular) * q;
                Configuration::spatial(
                    self.translation + d.linear,
                    UnitQuaternion::new_normalize(r.into_inner()),
                )
            }
        }
    }

    /// Geodesic rotation angle between two orientations, in [0, pi].
    pub fn rotation_angle_to(&self, other: &Configuration) -> f64 {
        match (self.rotation, other.rotation) {
            (Rotation::Planar(a), Rotation::Planar(b)) => wrap_angle(b - a).abs(),
            _ => self.quaternion().angle_to(&other.quaternion()),
        }
    }

    /// Replaces the translation, keeping the orientation.
    pub fn with_translation(&self, translation: Vector3<f64>) -> Configuration {
        let mut out = *self;
        out.translation = translation;
        if let Rotation::Planar(_) = out.rotation {
            out.translation.z = 0.0;
        }
        out
    }
}

fn same_space(a: &Configuration, b: &Configuration) -> Result<()> {
    if a.space() != b.space() {
        return Err(Error::usage(format!(
            "configurations live in different spaces ({:?} vs {:?})",
            a.space(),
            b.space()
        )));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ConfigurationRepr {
    Se2([f64; 3]),
    /// x, y, z, qw, qx, qy, qz
    Se3([f64; 7]),
}

impl Serialize for Configuration {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let t = &self.translation;
        let repr = match self.rotation {
            Rotation::Planar(theta) => ConfigurationRepr::Se2([t.x, t.y, theta]),
            Rotation::Spatial(q) => ConfigurationRepr::Se3([t.x, t.y, t.z, q.w, q.i, q.j, q.k]),
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Configuration {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match ConfigurationRepr::deserialize(deserializer)? {
            ConfigurationRepr::Se2([x, y, theta]) => {
                if !(x.is_finite() && y.is_finite() && theta.is_finite()) {
                    return Err(D::Error::custom("non-finite SE(2) configuration"));
                }
                // Already-wrapped angles pass through bit-exact.
                let wrapped = if theta > -PI && theta <= PI { theta } else { wrap_angle(theta) };
                Ok(Configuration {
                    translation: Vector3::new(x, y, 0.0),
                    rotation: Rotation::Planar(wrapped),
                })
            }
            ConfigurationRepr::Se3([x, y, z, w, i, j, k]) => {
                let q = Quaternion::new(w, i, j, k);
                let norm = q.norm();
                if !norm.is_finite() || norm < 1e-12 {
                    return Err(D::Error::custom("SE(3) rotation must be a non-zero quaternion"));
                }
                let unit = if (norm - 1.0).abs() <= 1e-9 {
                    UnitQuaternion::new_unchecked(q)
                } else {
                    UnitQuaternion::new_normalize(q)
                };
                Ok(Configuration::spatial(Vector3::new(x, y, z), unit))
            }
        }
    }
}

/// A world-frame twist between configurations (or a per-step control input).
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Displacement {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Displacement {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Upper bound on how far any body point within `radius` of the origin moves.
    pub fn workspace_bound(&self, radius: f64) -> f64 {
        self.linear.norm() + self.angular.norm() * radius
    }

    /// Packs the free components into a vector (`[x, y, wz]` or `[x, y, z, wx, wy, wz]`).
    pub fn to_vector(&self, space: Space) -> DVector<f64> {
        match space {
            Space::Se2 => DVector::from_column_slice(&[self.linear.x, self.linear.y, self.angular.z]),
            Space::Se3 => DVector::from_column_slice(&[
                self.linear.x,
                self.linear.y,
                self.linear.z,
                self.angular.x,
                self.angular.y,
                self.angular.z,
            ]),
        }
    }

    pub fn from_vector(space: Space, v: &DVector<f64>) -> Self {
        match space {
            Space::Se2 => Displacement {
                linear: Vector3::new(v[0], v[1], 0.0),
                angular: Vector3::new(0.0, 0.0, v[2]),
            },
            Space::Se3 => Displacement {
                linear: Vector3::new(v[0], v[1], v[2]),
                angular: Vector3::new(v[3], v[4], v[5]),
            },
        }
    }
}

impl Add for Displacement {
    type Output = Displacement;
    fn add(self, rhs: Displacement) -> Displacement {
        Displacement {
            linear: self.linear + rhs.linear,
            angular: self.angular + rhs.angular,
        }
    }
}

impl Sub for Displacement {
    type Output = Displacement;
    fn sub(self, rhs: Displacement) -> Displacement {
        Displacement {
            linear: self.linear - rhs.linear,
            angular: self.angular - rhs.angular,
        }
    }
}

impl Neg for Displacement {
    type Output = Displacement;
    fn neg(self) -> Displacement {
        Displacement {
            linear: -self.linear,
            angular: -self.angular,
        }
    }
}

impl Mul<f64> for Displacement {
    type Output = Displacement;
    fn mul(self, s: f64) -> Displacement {
        Displacement {
            linear: self.linear * s,
            angular: self.angular * s,
        }
    }
}

/// Composite C-space metric: Euclidean translation plus weighted geodesic rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceMetric {
    /// Meters charged per radian of rotation.
    pub rotation_weight: f64,
}

impl SpaceMetric {
    pub fn new(rotation_weight: f64) -> Result<Self> {
        if !(rotation_weight > 0.0 && rotation_weight.is_finite()) {
            return Err(Error::usage("rotation_weight must be positive and finite"));
        }
        Ok(Self { rotation_weight })
    }

    /// Default weight: half the robot's bounding radius.
    pub fn for_robot_radius(bounding_radius: f64) -> Result<Self> {
        Self::new(0.5 * bounding_radius)
    }

    pub fn distance(&self, a: &Configuration, b: &Configuration) -> Result<f64> {
        same_space(a, b)?;
        Ok(self.between(a, b))
    }

    /// Distance without the space check; callers guarantee matching spaces.
    #[inline]
    pub(crate) fn between(&self, a: &Configuration, b: &Configuration) -> f64 {
        (b.translation - a.translation).norm() + self.rotation_weight * a.rotation_angle_to(b)
    }

    /// Same weighting applied to a twist.
    pub fn displacement_norm(&self, d: &Displacement) -> f64 {
        d.linear.norm() + self.rotation_weight * d.angular.norm()
    }
}

/// Linear interpolation in translation, shortest-arc interpolation in rotation.
pub fn interpolate(a: &Configuration, b: &Configuration, t: f64) -> Result<Configuration> {
    same_space(a, b)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::usage(format!("interpolation fraction {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(*a);
    }
    if t == 1.0 {
        return Ok(*b);
    }
    let translation = a.translation + (b.translation - a.translation) * t;
    Ok(match (a.rotation, b.rotation) {
        (Rotation::Planar(ta), Rotation::Planar(tb)) => {
            Configuration::planar(translation.x, translation.y, ta + t * wrap_angle(tb - ta))
        }
        (Rotation::Spatial(qa), Rotation::Spatial(qb)) => {
            let delta = (qb * qa.inverse()).scaled_axis();
            let q = UnitQuaternion::from_scaled_axis(delta * t) * qa;
            Configuration::spatial(translation, UnitQuaternion::new_normalize(q.into_inner()))
        }
        _ => unreachable!("space mismatch checked above"),
    })
}

/// Orientation range used when sampling configurations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RotationRange {
    /// Headings in `[min, max]` radians.
    Planar { min: f64, max: f64 },
    /// Uniformly distributed unit quaternions.
    Uniform,
    /// Rotations within `max_angle` of `center`: uniform axis, uniform angle.
    Cone {
        center: UnitQuaternion<f64>,
        max_angle: f64,
    },
}

/// Axis-aligned translation box plus an orientation range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingBounds {
    pub space: Space,
    pub lower: Vector3<f64>,
    pub upper: Vector3<f64>,
    pub rotation: RotationRange,
}

impl SamplingBounds {
    fn validate(&self) -> Result<()> {
        let dims = self.space.workspace_dim();
        for axis in 0..dims {
            let (lo, hi) = (self.lower[axis], self.upper[axis]);
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::usage(format!("empty sampling bounds on axis {axis}")));
            }
        }
        match (self.space, self.rotation) {
            (Space::Se2, RotationRange::Planar { min, max }) if min <= max => Ok(()),
            (Space::Se2, _) => Err(Error::usage("SE(2) bounds need a non-empty planar rotation range")),
            (Space::Se3, RotationRange::Planar { .. }) => {
                Err(Error::usage("SE(3) bounds cannot use a planar rotation range"))
            }
            (Space::Se3, RotationRange::Cone { max_angle, .. }) if !(max_angle >= 0.0) => {
                Err(Error::usage("cone half-angle must be non-negative"))
            }
            _ => Ok(()),
        }
    }
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Shoemake's method for uniformly distributed unit quaternions.
fn uniform_quaternion<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = Quaternion::new(
        b * (2.0 * PI * u3).cos(),
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
    );
    UnitQuaternion::new_normalize(q)
}

fn unit_sphere<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Samples a configuration uniformly within `bounds`.
pub fn sample_uniform<R: Rng + ?Sized>(bounds: &SamplingBounds, rng: &mut R) -> Result<Configuration> {
    bounds.validate()?;
    let mut t = Vector3::zeros();
    for axis in 0..bounds.space.workspace_dim() {
        t[axis] = uniform_in(rng, bounds.lower[axis], bounds.upper[axis]);
    }
    Ok(match bounds.rotation {
        RotationRange::Planar { min, max } => Configuration::planar(t.x, t.y, uniform_in(rng, min, max)),
        RotationRange::Uniform => Configuration::spatial(t, uniform_quaternion(rng)),
        RotationRange::Cone { center, max_angle } => {
            let axis = unit_sphere(rng);
            let angle = uniform_in(rng, 0.0, max_angle);
            Configuration::spatial(t, UnitQuaternion::from_scaled_axis(axis * angle) * center)
        }
    })
}

/// Bounded actuation noise: per-axis zero-mean truncated normal velocity error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub gamma: f64,
    /// Linear velocity bound (m/s).
    pub linear_bound: f64,
    /// Angular velocity bound (rad/s).
    pub angular_bound: f64,
}

impl NoiseModel {
    /// Linear bound `gamma`, angular bound `gamma / 4`.
    pub fn from_gamma(gamma: f64) -> Result<Self> {
        Self::new(gamma, gamma, 0.25 * gamma)
    }

    pub fn new(gamma: f64, linear_bound: f64, angular_bound: f64) -> Result<Self> {
        if !(gamma >= 0.0 && linear_bound >= 0.0 && angular_bound >= 0.0) {
            return Err(Error::usage("noise bounds must be non-negative"));
        }
        Ok(Self {
            gamma,
            linear_bound,
            angular_bound,
        })
    }

    pub fn noiseless() -> Self {
        Self {
            gamma: 0.0,
            linear_bound: 0.0,
            angular_bound: 0.0,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.gamma == 0.0 || (self.linear_bound == 0.0 && self.angular_bound == 0.0)
    }

    pub fn linear_std(&self) -> f64 {
        0.5 * self.linear_bound
    }

    pub fn angular_std(&self) -> f64 {
        0.5 * self.angular_bound
    }

    /// Draws a velocity error sample for the free axes of `space`.
    pub fn sample<R: Rng + ?Sized>(&self, space: Space, rng: &mut R) -> Displacement {
        if self.is_noiseless() {
            return Displacement::zero();
        }
        let mut d = Displacement::zero();
        match space {
            Space::Se2 => {
                d.linear.x = truncated_normal(rng, self.linear_bound);
                d.linear.y = truncated_normal(rng, self.linear_bound);
                d.angular.z = truncated_normal(rng, self.angular_bound);
            }
            Space::Se3 => {
                for axis in 0..3 {
                    d.linear[axis] = truncated_normal(rng, self.linear_bound);
                }
                for axis in 0..3 {
                    d.angular[axis] = truncated_normal(rng, self.angular_bound);
                }
            }
        }
        d
    }
}

/// Zero-mean normal with std `bound / 2`, truncated to `[-bound, bound]` by rejection.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    if bound <= 0.0 {
        return 0.0;
    }
    let std = 0.5 * bound;
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let x = z * std;
        if x.abs() <= bound {
            return x;
        }
    }
}

/// A particle approximation of the robot's belief.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeliefState {
    particles: Vec<Configuration>,
}

impl BeliefState {
    pub fn new(particles: Vec<Configuration>) -> Result<Self> {
        let first = particles
            .first()
            .ok_or_else(|| Error::usage("a belief needs at least one particle"))?;
        if particles.iter().any(|p| p.space() != first.space()) {
            return Err(Error::usage("belief particles must share one space"));
        }
        Ok(Self { particles })
    }

    /// `n` copies of one configuration.
    pub fn point(q: Configuration, n: usize) -> Self {
        Self {
            particles: vec![q; n.max(1)],
        }
    }

    pub fn particles(&self) -> &[Configuration] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn space(&self) -> Space {
        self.particles[0].space()
    }

    pub fn expect(&self) -> Configuration {
        expect(&self.particles).expect("belief is non-empty by construction")
    }

    pub fn variance(&self) -> DVector<f64> {
        variance(&self.particles).expect("belief is non-empty by construction")
    }
}

/// Mean configuration: arithmetic mean of translations, circular mean of headings,
/// sign-aligned normalized quaternion mean for SE(3).
pub fn expect(particles: &[Configuration]) -> Result<Configuration> {
    let first = particles
        .first()
        .ok_or_else(|| Error::usage("expectation of an empty belief"))?;
    let n = particles.len() as f64;
    let translation = particles
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.translation)
        / n;
    Ok(match first.rotation {
        Rotation::Planar(theta0) => {
            let (s, c) = particles.iter().fold((0.0, 0.0), |(s, c), p| {
                let th = p.angle().unwrap_or(0.0);
                (s + th.sin(), c + th.cos())
            });
            let theta = if s.hypot(c) < 1e-12 { theta0 } else { s.atan2(c) };
            Configuration::planar(translation.x, translation.y, theta)
        }
        Rotation::Spatial(q0) => {
            let reference = q0.into_inner();
            let sum = particles.iter().fold(Quaternion::new(0.0, 0.0, 0.0, 0.0), |acc, p| {
                let q = p.quaternion().into_inner();
                if q.dot(&reference) < 0.0 {
                    acc - q
                } else {
                    acc + q
                }
            });
            let rotation = if sum.norm() < 1e-12 {
                q0
            } else {
                UnitQuaternion::new_normalize(sum)
            };
            Configuration::spatial(translation, rotation)
        }
    })
}

/// Per-axis population variance: translation axes, then rotation log-coordinates
/// measured about the mean orientation.
pub fn variance(particles: &[Configuration]) -> Result<DVector<f64>> {
    let mean = expect(particles)?;
    let space = mean.space();
    let n = particles.len() as f64;
    let dims = space.workspace_dim();
    let mut out = DVector::zeros(space.dof());
    for p in particles {
        let d = mean.displacement_to(p);
        for axis in 0..dims {
            out[axis] += d.linear[axis] * d.linear[axis];
        }
        match space {
            Space::Se2 => out[2] += d.angular.z * d.angular.z,
            Space::Se3 => {
                for axis in 0..3 {
                    out[3 + axis] += d.angular[axis] * d.angular[axis];
                }
            }
        }
    }
    Ok(out / n)
}
