//! Local implicit representations of solids and of swept volumes.
//!
//! The pipeline has three stages:
//!
//! 1. **Implicitize** an oriented point cloud into a [`LocalImplicitRep`]:
//!    a collection of bounded areas (boxes or balls), each carrying a local
//!    implicit procedure whose nonpositive set describes the solid inside
//!    that area. Two builders are provided: an octree of quadric fits
//!    ([`mpu`]) and a ball cover of blended bivariate patches ([`slim`]).
//! 2. **Sweep** the representation along a time-dependent rigid motion
//!    ([`motion::RigidMotion`]) into a [`sweep::SweptVolumeRep`]: the swept
//!    bounding box is partitioned into cells, and each cell records which
//!    areas can touch it and during which time intervals.
//! 3. **Query** the swept structure: point membership, signed-distance
//!    style values, time witnesses, ray intersections and boolean
//!    subtraction grids ([`query`]).

pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod motion;
pub mod mpu;
pub mod query;
pub mod slim;
pub mod solvers;
pub mod spatial;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{
    Area, Ball3, BivariatePatch, Box3, LocalImplicitRep, LocalProcedure, OrientedPointCloud,
    Quadric3, RepKind,
};
pub use motion::{Isometry, PiecewisePoly, RigidMotion};
pub use solvers::SolverConfig;
