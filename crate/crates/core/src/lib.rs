//! Belief-space motion planning for compliant robots with actuation uncertainty.
//!
//! The crate is organised bottom-up:
//!
//! - [`spaces`]: SE(2)/SE(3) configurations, metric, sampling, noise and belief statistics.
//! - [`environment`]: voxel world, point-sampled robot, contacts, region signatures.
//! - [`simulator`]: kinematic PD simulation with compliant collision resolution and the
//!   contact motion controller used at execution time.
//! - [`clustering`]: complete-link clustering and the particle clustering passes.
//! - [`planner`]: the particle RRT that produces solution paths.
//! - [`policy`]: policy graph construction, queries and online adaptation.
//! - [`harness`]: scenario files, traces and experiment drivers.

pub mod clustering;
pub mod environment;
pub mod error;
pub mod harness;
pub mod planner;
pub mod policy;
pub mod seeds;
pub mod simulator;
pub mod spaces;

pub use error::{Error, Result};
