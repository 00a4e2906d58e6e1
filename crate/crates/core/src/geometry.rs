//! Core geometric types: oriented point clouds, boxes, balls, quadrics,
//! bivariate patches and the local implicit representation they assemble
//! into.
//!
//! Everything here is immutable after construction and safe to share
//! across threads. Containment tests use closed sets (a boundary point
//! counts as inside), and procedures may be evaluated slightly outside
//! their area: the polynomials extend globally, callers gate on area
//! membership themselves.

use crate::error::{Error, Result};
use nalgebra::{Point3, Vector3};
use std::path::Path;

/// A surface sample: position plus unit outer normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedPoint {
    pub position: Point3<f64>,
    pub normal: Vector3<f64>,
}

/// An oriented point cloud. Normals are unit length to within 1e-6.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedPointCloud {
    points: Vec<OrientedPoint>,
}

impl OrientedPointCloud {
    /// Validates finiteness, normal lengths and non-emptiness.
    pub fn new(points: Vec<OrientedPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.position.coords.iter().all(|c| c.is_finite())
                || !p.normal.iter().all(|c| c.is_finite())
            {
                return Err(Error::invalid(format!("non-finite coordinates at point {i}")));
            }
            if (p.normal.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "normal at point {i} has norm {:.9}, expected 1",
                    p.normal.norm()
                )));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[OrientedPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn position(&self, i: usize) -> Point3<f64> {
        self.points[i].position
    }

    pub fn normal(&self, i: usize) -> Vector3<f64> {
        self.points[i].normal
    }

    /// Axis-aligned bounding box of the positions.
    pub fn bounding_box(&self) -> Box3 {
        let mut min = self.points[0].position;
        let mut max = min;
        for p in &self.points {
            for k in 0..3 {
                min[k] = min[k].min(p.position[k]);
                max[k] = max[k].max(p.position[k]);
            }
        }
        Box3 { min, max }
    }

    /// Parses the plain-text cloud format: one point per line, six
    /// whitespace-separated fields `x y z nx ny nz`, `#` comments.
    /// Normals within 1e-3 of unit length are renormalized, anything
    /// further off is rejected with the offending line number.
    pub fn parse_xyzn(text: &str, path: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line,
                    msg: format!("expected 6 fields `x y z nx ny nz`, got {}", fields.len()),
                });
            }
            let mut v = [0.0f64; 6];
            for (k, f) in fields.iter().enumerate() {
                v[k] = f.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_string(),
                    line,
                    msg: format!("field {} is not a number: `{f}`", k + 1),
                })?;
                if !v[k].is_finite() {
                    return Err(Error::Parse {
                        path: path.to_string(),
                        line,
                        msg: format!("field {} is not finite", k + 1),
                    });
                }
            }
            let normal = Vector3::new(v[3], v[4], v[5]);
            let norm = normal.norm();
            if (norm - 1.0).abs() > 1e-3 {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line,
                    msg: format!("normal has norm {norm:.6}, more than 1e-3 away from 1"),
                });
            }
            points.push(OrientedPoint {
                position: Point3::new(v[0], v[1], v[2]),
                normal: normal / norm,
            });
        }
        Self::new(points).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::Parse {
                path: path.to_string(),
                line: 0,
                msg,
            },
            other => other,
        })
    }

    pub fn load_xyzn(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_xyzn(&text, &path.display().to_string())
    }
}

/// Axis-aligned box, `min <= max` componentwise. Closed containment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3 {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

/// One signed face function of an axis-aligned box: `P . n - d` with unit
/// outward normal `n` along `axis * sign`. Zero on the face, positive
/// outside, depends on exactly one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceFn {
    pub axis: usize,
    pub sign: f64,
    pub offset: f64,
}

impl FaceFn {
    pub fn eval(&self, p: &Point3<f64>) -> f64 {
        self.sign * p[self.axis] - self.offset
    }
}

impl Box3 {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Result<Self> {
        if (0..3).any(|k| min[k] > max[k]) || min.coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("box min must be <= max and finite"));
        }
        if max.coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("box max must be finite"));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }

    pub fn centre(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn extents(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn half_extents(&self) -> Vector3<f64> {
        (self.max - self.min) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn volume(&self) -> f64 {
        let e = self.extents();
        e.x * e.y * e.z
    }

    pub fn surface_area(&self) -> f64 {
        let e = self.extents();
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }

    /// Euclidean distance from a point; 0 inside.
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let excess = (self.min[k] - p[k]).max(0.0).max(p[k] - self.max[k]);
            d2 += excess * excess;
        }
        d2.sqrt()
    }

    /// Closest point of the box (componentwise clamp).
    pub fn clamp_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }

    pub fn corners(&self) -> [Point3<f64>; 8] {
        let (lo, hi) = (self.min, self.max);
        let pick = |m: u8, k: usize| if m & (1 << k) == 0 { lo[k] } else { hi[k] };
        std::array::from_fn(|i| {
            let m = i as u8;
            Point3::new(pick(m, 0), pick(m, 1), pick(m, 2))
        })
    }

    /// Distance between two axis-aligned boxes; 0 when they overlap.
    pub fn distance_to_box(&self, other: &Box3) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let gap = (self.min[k] - other.max[k]).max(other.min[k] - self.max[k]).max(0.0);
            d2 += gap * gap;
        }
        d2.sqrt()
    }

    pub fn overlaps(&self, other: &Box3) -> bool {
        (0..3).all(|k| self.min[k] <= other.max[k] && other.min[k] <= self.max[k])
    }

    /// Smallest box containing both operands.
    pub fn union(&self, other: &Box3) -> Box3 {
        let mut min = self.min;
        let mut max = self.max;
        for k in 0..3 {
            min[k] = min[k].min(other.min[k]);
            max[k] = max[k].max(other.max[k]);
        }
        Box3 { min, max }
    }

    /// The six signed face functions, ordered x-,x+,y-,y+,z-,z+ so that
    /// `faces()[2*axis + (sign>0) as usize]` addresses one face. A point is
    /// inside the box iff all six values are <= 0.
    pub fn faces(&self) -> [FaceFn; 6] {
        let mut out = [FaceFn { axis: 0, sign: 1.0, offset: 0.0 }; 6];
        for axis in 0..3 {
            out[2 * axis] = FaceFn { axis, sign: -1.0, offset: -self.min[axis] };
            out[2 * axis + 1] = FaceFn { axis, sign: 1.0, offset: self.max[axis] };
        }
        out
    }

    /// Face function addressed the way the contact equations do: axis in
    /// 0..3 and sign +-1.
    pub fn face(&self, axis: usize, sign: f64) -> FaceFn {
        if sign > 0.0 {
            FaceFn { axis, sign: 1.0, offset: self.max[axis] }
        } else {
            FaceFn { axis, sign: -1.0, offset: -self.min[axis] }
        }
    }
}

/// Ball with positive radius. Closed containment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball3 {
    pub centre: Point3<f64>,
    pub radius: f64,
}

impl Ball3 {
    pub fn new(centre: Point3<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() || centre.coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("ball needs a finite centre and radius > 0"));
        }
        Ok(Self { centre, radius })
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (p - self.centre).norm() <= self.radius
    }

    pub fn bounding_box(&self) -> Box3 {
        let r = Vector3::repeat(self.radius);
        Box3 { min: self.centre - r, max: self.centre + r }
    }

    pub fn clamp_point(&self, p: &Point3<f64>) -> Point3<f64> {
        let d = p - self.centre;
        let n = d.norm();
        if n <= self.radius {
            *p
        } else {
            self.centre + d * (self.radius / n)
        }
    }
}

/// General trivariate quadratic polynomial. Coefficient order:
/// `[1, x, y, z, x^2, y^2, z^2, xy, xz, yz]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadric3 {
    pub coeffs: [f64; 10],
}

impl Quadric3 {
    pub fn new(coeffs: [f64; 10]) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("quadric coefficients must be finite"));
        }
        Ok(Self { coeffs })
    }

    pub fn basis(p: &Point3<f64>) -> [f64; 10] {
        let (x, y, z) = (p.x, p.y, p.z);
        [1.0, x, y, z, x * x, y * y, z * z, x * y, x * z, y * z]
    }

    pub fn eval(&self, p: &Point3<f64>) -> f64 {
        Self::basis(p).iter().zip(&self.coeffs).map(|(b, c)| b * c).sum()
    }

    pub fn gradient(&self, p: &Point3<f64>) -> Vector3<f64> {
        let c = &self.coeffs;
        let (x, y, z) = (p.x, p.y, p.z);
        Vector3::new(
            c[1] + 2.0 * c[4] * x + c[7] * y + c[8] * z,
            c[2] + 2.0 * c[5] * y + c[7] * x + c[9] * z,
            c[3] + 2.0 * c[6] * z + c[8] * x + c[9] * y,
        )
    }
}

/// Orthonormal local frame: origin plus axes (u, v, n).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub origin: Point3<f64>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub n: Vector3<f64>,
}

impl Frame {
    pub fn new(origin: Point3<f64>, u: Vector3<f64>, v: Vector3<f64>, n: Vector3<f64>) -> Result<Self> {
        let tol = 1e-9;
        let ortho = u.dot(&v).abs() < tol && u.dot(&n).abs() < tol && v.dot(&n).abs() < tol;
        let unit = (u.norm() - 1.0).abs() < tol && (v.norm() - 1.0).abs() < tol && (n.norm() - 1.0).abs() < tol;
        if !ortho || !unit {
            return Err(Error::invalid("frame axes must be orthonormal within 1e-9"));
        }
        Ok(Self { origin, u, v, n })
    }

    /// Builds a frame from a unit normal, completing (u, v) deterministically.
    pub fn from_normal(origin: Point3<f64>, n: Vector3<f64>) -> Result<Self> {
        let norm = n.norm();
        if norm < 1e-12 {
            return Err(Error::DegenerateFrame { norm });
        }
        let n = n / norm;
        // Seed with the axis least aligned with n.
        let ax = [Vector3::x(), Vector3::y(), Vector3::z()];
        let seed = ax
            .into_iter()
            .min_by(|a, b| a.dot(&n).abs().partial_cmp(&b.dot(&n).abs()).unwrap())
            .unwrap();
        let u = (seed - n * seed.dot(&n)).normalize();
        let v = n.cross(&u);
        Ok(Self { origin, u, v, n })
    }

    pub fn local(&self, p: &Point3<f64>) -> (f64, f64, f64) {
        let d = p - self.origin;
        (d.dot(&self.u), d.dot(&self.v), d.dot(&self.n))
    }
}

/// Bivariate quadratic in a local frame:
/// `f(p) = w - (c20 u^2 + c11 uv + c02 v^2 + c10 u + c01 v + c00)`
/// where (u, v, w) are the coordinates of p in the frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariatePatch {
    pub frame: Frame,
    pub c20: f64,
    pub c11: f64,
    pub c02: f64,
    pub c10: f64,
    pub c01: f64,
    pub c00: f64,
}

impl BivariatePatch {
    pub fn from_coeffs(frame: Frame, c: [f64; 6]) -> Self {
        Self { frame, c20: c[0], c11: c[1], c02: c[2], c10: c[3], c01: c[4], c00: c[5] }
    }

    pub fn eval(&self, p: &Point3<f64>) -> f64 {
        let (u, v, w) = self.frame.local(p);
        w - (self.c20 * u * u + self.c11 * u * v + self.c02 * v * v + self.c10 * u + self.c01 * v + self.c00)
    }

    pub fn gradient(&self, p: &Point3<f64>) -> Vector3<f64> {
        let (u, v, _) = self.frame.local(p);
        let du = -(2.0 * self.c20 * u + self.c11 * v + self.c10);
        let dv = -(self.c11 * u + 2.0 * self.c02 * v + self.c01);
        self.frame.u * du + self.frame.v * dv + self.frame.n
    }
}

/// Local implicit procedure attached to one area.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalProcedure {
    GeneralQuadric(Quadric3),
    Patch(BivariatePatch),
    /// Minimum of 2..=4 patches, modelling edges and corners.
    MinOfPatches(Vec<BivariatePatch>),
}

impl LocalProcedure {
    pub fn min_of_patches(patches: Vec<BivariatePatch>) -> Result<Self> {
        if patches.len() < 2 || patches.len() > 4 {
            return Err(Error::invalid(format!(
                "MinOfPatches holds 2..=4 pieces, got {}",
                patches.len()
            )));
        }
        Ok(LocalProcedure::MinOfPatches(patches))
    }

    pub fn eval(&self, p: &Point3<f64>) -> f64 {
        match self {
            LocalProcedure::GeneralQuadric(q) => q.eval(p),
            LocalProcedure::Patch(b) => b.eval(p),
            LocalProcedure::MinOfPatches(ps) => {
                ps.iter().map(|b| b.eval(p)).fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Value and gradient; for a min of patches the active (minimal) piece
    /// supplies the gradient.
    pub fn eval_with_gradient(&self, p: &Point3<f64>) -> (f64, Vector3<f64>) {
        match self {
            LocalProcedure::GeneralQuadric(q) => (q.eval(p), q.gradient(p)),
            LocalProcedure::Patch(b) => (b.eval(p), b.gradient(p)),
            LocalProcedure::MinOfPatches(ps) => {
                let mut best = (f64::INFINITY, Vector3::zeros());
                for b in ps {
                    let val = b.eval(p);
                    if val < best.0 {
                        best = (val, b.gradient(p));
                    }
                }
                best
            }
        }
    }
}

/// Evaluates a local procedure at a point. Total; see the module note on
/// evaluation outside areas.
pub fn eval_procedure(proc: &LocalProcedure, p: &Point3<f64>) -> f64 {
    proc.eval(p)
}

/// Bounded area housing one local procedure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Area {
    Box(Box3),
    Ball(Ball3),
}

impl Area {
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        match self {
            Area::Box(b) => b.contains(p),
            Area::Ball(b) => b.contains(p),
        }
    }

    pub fn bounding_box(&self) -> Box3 {
        match self {
            Area::Box(b) => *b,
            Area::Ball(b) => b.bounding_box(),
        }
    }

    pub fn centre(&self) -> Point3<f64> {
        match self {
            Area::Box(b) => b.centre(),
            Area::Ball(b) => b.centre,
        }
    }

    /// Radius of the smallest enclosing sphere centred at `centre()`.
    pub fn circumradius(&self) -> f64 {
        match self {
            Area::Box(b) => b.half_extents().norm(),
            Area::Ball(b) => b.radius,
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Area::Box(b) => b.diagonal(),
            Area::Ball(b) => 2.0 * b.radius,
        }
    }

    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        match self {
            Area::Box(b) => b.distance(p),
            Area::Ball(b) => ((p - b.centre).norm() - b.radius).max(0.0),
        }
    }

    pub fn clamp_point(&self, p: &Point3<f64>) -> Point3<f64> {
        match self {
            Area::Box(b) => b.clamp_point(p),
            Area::Ball(b) => b.clamp_point(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepKind {
    /// Areas are axis-aligned boxes tiling the bound (MPU output).
    OctreeBased,
    /// Areas are balls centred on cloud points (Slim output).
    BallCover,
}

/// One (area, procedure) pair of a local implicit representation.
#[derive(Debug, Clone, PartialEq)]
pub struct RepPatch {
    pub area: Area,
    pub procedure: LocalProcedure,
    /// Set when the builder accepted this patch on a degraded path
    /// (depth cap, ridge fallback, forced termination).
    pub flagged: bool,
}

/// Def-1 style local implicit representation: the solid is the set of
/// points lying in some area with procedure value <= 0 there.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalImplicitRep {
    pub kind: RepKind,
    pub patches: Vec<RepPatch>,
    pub bound: Box3,
    /// Required for `BallCover`: uncovered queries fall back to a
    /// nearest-neighbour signed distance against this cloud.
    pub fallback_cloud: Option<OrientedPointCloud>,
    /// Optional coarser multi-scale levels (level k holds the fits that
    /// were computed but not accepted at that level).
    pub levels: Option<Vec<Vec<(Ball3, LocalProcedure)>>>,
}

impl LocalImplicitRep {
    /// Structural invariants only: area kinds match `kind` and the bound
    /// contains every area. Hand-authored ball collections without a
    /// generating cloud pass this but not [`validate`](Self::validate).
    pub fn validate_structure(&self) -> Result<()> {
        if self.patches.is_empty() {
            return Err(Error::invalid("representation has no patches"));
        }
        for (i, p) in self.patches.iter().enumerate() {
            match (self.kind, &p.area) {
                (RepKind::OctreeBased, Area::Box(_)) | (RepKind::BallCover, Area::Ball(_)) => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "patch {i} area kind does not match representation kind"
                    )))
                }
            }
            let bb = p.area.bounding_box();
            let eps = 1e-9 * (1.0 + self.bound.diagonal());
            for k in 0..3 {
                if bb.min[k] < self.bound.min[k] - eps || bb.max[k] > self.bound.max[k] + eps {
                    return Err(Error::invalid(format!("patch {i} escapes the bound")));
                }
            }
        }
        Ok(())
    }

    /// Full invariants: the structure checks plus the fallback-cloud rule
    /// (a ball cover must carry one for uncovered queries).
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        match self.kind {
            RepKind::BallCover if self.fallback_cloud.is_none() => {
                Err(Error::invalid("ball cover requires a fallback cloud"))
            }
            _ => Ok(()),
        }
    }

    /// Coverage invariant: every point of the generating cloud lies in at
    /// least one area. Returns the indices of uncovered points.
    pub fn uncovered_points(&self, cloud: &OrientedPointCloud) -> Vec<usize> {
        (0..cloud.len())
            .filter(|&i| {
                let p = cloud.position(i);
                !self.patches.iter().any(|patch| patch.area.contains(&p))
            })
            .collect()
    }

    /// Def-1 membership: the minimum procedure value over areas containing
    /// `p`, or `None` when no area contains it (outside the solid).
    pub fn membership_value(&self, p: &Point3<f64>) -> Option<f64> {
        let mut best = None;
        for patch in &self.patches {
            if patch.area.contains(p) {
                let v = patch.procedure.eval(p);
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
        best
    }

    /// Def-1 membership verdict.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        self.membership_value(p).map_or(false, |v| v <= 0.0)
    }
}
