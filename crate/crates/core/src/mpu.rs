//! Octree implicitization: adaptive cube subdivision with local quadric
//! fits, driven by the Taubin error of each fit against the points in the
//! cube's support sphere.
//!
//! The build rescales the cloud so its bounding cube has diagonal 1,
//! processes a worklist of cubes (accept when the fit is good enough,
//! subdivide otherwise), and maps the accepted fits back to world
//! coordinates. Local fits come in three flavours: a general quadric when
//! normals spread over more than a half sphere, a bivariate patch over the
//! mean normal otherwise, and a 2-4 piece min-of-patches around sharp
//! features when the support is sparse.

use crate::error::{Error, Result};
use crate::geometry::{
    Area, Ball3, BivariatePatch, Box3, Frame, LocalImplicitRep, LocalProcedure, OrientedPoint,
    OrientedPointCloud, Quadric3, RepKind, RepPatch,
};
use crate::solvers::{wls_fit, WlsRow};
use crate::spatial::KdTree;
use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpuParams {
    /// Support sphere radius as a fraction of the cube diagonal.
    pub alpha: f64,
    /// Minimum number of points a local fit wants to see.
    pub n_min: usize,
    /// Taubin-error acceptance threshold (in rescaled units where the
    /// root cube has diagonal 1).
    pub eps0: f64,
    /// Cosine threshold deciding "no sharp feature after all".
    pub theta_sharp: f64,
    /// Cosine threshold separating edges from corners.
    pub theta_corner: f64,
    pub max_depth: usize,
}

impl Default for MpuParams {
    fn default() -> Self {
        Self { alpha: 0.75, n_min: 15, eps0: 1e-4, theta_sharp: 0.9, theta_corner: 0.7, max_depth: 12 }
    }
}

impl MpuParams {
    pub fn validate(&self) -> Result<()> {
        // The support sphere of radius alpha * diagonal must contain the
        // cube, i.e. reach its circumradius of half a diagonal.
        if self.alpha < 0.5 {
            return Err(Error::invalid("alpha must be >= 0.5 so the support sphere contains the cube"));
        }
        if self.n_min < 7 {
            return Err(Error::invalid("n_min must be >= 7"));
        }
        if !(self.eps0 > 0.0) {
            return Err(Error::invalid("eps0 must be positive"));
        }
        if self.max_depth == 0 {
            return Err(Error::invalid("max_depth must be >= 1"));
        }
        Ok(())
    }
}

/// Centered quadratic B-spline: support (-3/2, 3/2), peak 3/4 at 0.
fn quadratic_bspline(t: f64) -> f64 {
    let t = t.abs();
    if t <= 0.5 {
        0.75 - t * t
    } else if t <= 1.5 {
        0.5 * (1.5 - t) * (1.5 - t)
    } else {
        0.0
    }
}

/// Fit weight of a point against a support sphere: `b(3 |p - c| / (2R))`,
/// 3/4 at the centre, 0 on the sphere.
pub fn support_weight(p: &Point3<f64>, sphere: &Ball3) -> f64 {
    quadratic_bspline(1.5 * (p - sphere.centre).norm() / sphere.radius)
}

/// Which branch the local fitter took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitCase {
    GeneralQuadric,
    Patch,
    /// Sharp-feature path with this many pieces (1 when the cascade
    /// decided there was no feature).
    Sharp(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitInfo {
    pub case: FitCase,
    /// A least-squares subproblem needed the ridge fallback.
    pub ridge: bool,
    /// A sharp piece degenerated to a centroid plane.
    pub degenerate_piece: bool,
}

#[derive(Debug, Clone)]
pub enum FitOutcome {
    Fit(LocalProcedure, FitInfo),
    /// Case (a) lost all of its signed-distance anchors.
    Fail,
}

/// General quadric fit result.
#[derive(Debug, Clone)]
pub struct QuadricFit {
    pub quadric: Quadric3,
    pub ridge: bool,
    /// Anchor points that survived the sign-consistency filter (out of 9).
    pub anchors: usize,
}

/// Local approximation of a subcloud inside a support sphere, dispatching
/// on point count and normal spread.
pub fn local_fit(sub: &[OrientedPoint], sphere: Ball3, cube: Box3, params: &MpuParams) -> FitOutcome {
    let weights: Vec<f64> = sub.iter().map(|p| support_weight(&p.position, &sphere)).collect();
    let mean: Vector3<f64> = sub
        .iter()
        .zip(&weights)
        .map(|(p, w)| p.normal * *w)
        .sum();
    // Max angle between the mean normal and the samples, as a min dot. A
    // vanishing mean means the normals wrap around: treat as max spread.
    let min_dot = if mean.norm() < 1e-12 {
        -1.0
    } else {
        let n = mean.normalize();
        sub.iter().map(|p| p.normal.dot(&n)).fold(f64::INFINITY, f64::min)
    };
    let many = sub.len() > 2 * params.n_min;
    if many && min_dot <= 0.0 {
        // theta >= pi/2
        match fit_general_quadric(sub, sphere, cube, &weights) {
            Some(fit) => FitOutcome::Fit(
                LocalProcedure::GeneralQuadric(fit.quadric),
                FitInfo { case: FitCase::GeneralQuadric, ridge: fit.ridge, degenerate_piece: false },
            ),
            None => FitOutcome::Fail,
        }
    } else if many {
        let frame = Frame::from_normal(sphere.centre, mean)
            .unwrap_or_else(|_| Frame::from_normal(sphere.centre, sub[0].normal).unwrap());
        let (patch, ridge) = fit_bivariate(sub, sphere, frame);
        FitOutcome::Fit(
            LocalProcedure::Patch(patch),
            FitInfo { case: FitCase::Patch, ridge, degenerate_piece: false },
        )
    } else {
        let sharp = classify_and_fit_sharp(sub, sphere, params);
        FitOutcome::Fit(
            sharp.procedure,
            FitInfo {
                case: FitCase::Sharp(sharp.pieces),
                ridge: sharp.ridge,
                degenerate_piece: sharp.degenerate,
            },
        )
    }
}

/// General quadric minimizing the blended objective: the weighted squared
/// field over the samples (normalized by the weight sum) plus the mean
/// squared anchor misfit `(f(q) - d(q))^2` over the retained anchors.
///
/// Anchors are the cube's corners and centre; each keeps only if its 6
/// nearest subcloud neighbours agree on the sign of `n . (q - p)`, and
/// `d(q)` is the mean of those signed offsets. Returns `None` when every
/// anchor is rejected.
pub fn fit_general_quadric(
    sub: &[OrientedPoint],
    sphere: Ball3,
    cube: Box3,
    weights: &[f64],
) -> Option<QuadricFit> {
    let _ = sphere;
    let mut anchors: Vec<(Point3<f64>, f64)> = Vec::with_capacity(9);
    let mut candidates: Vec<Point3<f64>> = cube.corners().to_vec();
    candidates.push(cube.centre());
    let k = 6.min(sub.len());
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(sub.len());
    for q in candidates {
        scratch.clear();
        scratch.extend(sub.iter().enumerate().map(|(i, p)| ((p.position - q).norm(), i)));
        scratch.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
        let mut sum = 0.0;
        let mut pos = false;
        let mut neg = false;
        for &(_, i) in &scratch[..k] {
            let s = sub[i].normal.dot(&(q - sub[i].position));
            pos |= s > 0.0;
            neg |= s < 0.0;
            sum += s;
        }
        if !(pos && neg) {
            anchors.push((q, sum / k as f64));
        }
    }
    if anchors.is_empty() {
        return None;
    }
    let weight_sum: f64 = weights.iter().sum();
    let mut rows = Vec::with_capacity(sub.len() + anchors.len());
    if weight_sum > 0.0 {
        for (p, w) in sub.iter().zip(weights) {
            rows.push(WlsRow {
                basis: Quadric3::basis(&p.position).to_vec(),
                weight: w / weight_sum,
                target: 0.0,
            });
        }
    }
    let anchor_w = 1.0 / anchors.len() as f64;
    for (q, d) in &anchors {
        rows.push(WlsRow { basis: Quadric3::basis(q).to_vec(), weight: anchor_w, target: *d });
    }
    let fit = wls_fit(&rows).ok()?;
    let mut coeffs = [0.0; 10];
    coeffs.copy_from_slice(&fit.coefficients);
    Some(QuadricFit { quadric: Quadric3::new(coeffs).ok()?, ridge: fit.degraded, anchors: anchors.len() })
}

/// Bivariate patch minimizing the support-weighted squared field over the
/// subcloud. Degenerate systems fall back to a ridge and flag it; this fit
/// has no failure path.
pub fn fit_bivariate(sub: &[OrientedPoint], sphere: Ball3, frame: Frame) -> (BivariatePatch, bool) {
    let mut all_zero = true;
    let mut rows: Vec<WlsRow> = sub
        .iter()
        .map(|p| {
            let (u, v, w) = frame.local(&p.position);
            let weight = support_weight(&p.position, &sphere);
            all_zero &= weight == 0.0;
            WlsRow { basis: vec![u * u, u * v, v * v, u, v, 1.0], weight, target: w }
        })
        .collect();
    let mut forced = false;
    if all_zero {
        for row in &mut rows {
            row.weight = 1.0;
        }
        forced = true;
    }
    let fit = wls_fit(&rows).expect("bivariate rows are finite with positive weights");
    let c: [f64; 6] = std::array::from_fn(|i| fit.coefficients[i]);
    (BivariatePatch::from_coeffs(frame, c), fit.degraded || forced)
}

#[derive(Debug, Clone)]
pub struct SharpFit {
    pub procedure: LocalProcedure,
    pub pieces: usize,
    pub ridge: bool,
    /// A sub-pointset had fewer than 3 points and degenerated to the
    /// plane through its centroid.
    pub degenerate: bool,
}

/// Sharp-feature cascade: find the most antipodal normal pair, split by a
/// spherical Voronoi partition, and decide between a single patch, an
/// edge (2 pieces), or a 3- or 4-sided corner.
pub fn classify_and_fit_sharp(sub: &[OrientedPoint], sphere: Ball3, params: &MpuParams) -> SharpFit {
    let mut ridge = false;
    let mut degenerate = false;

    let fit_subset = |ids: &[usize], ridge: &mut bool, degenerate: &mut bool| -> BivariatePatch {
        fit_piece(sub, ids, sphere, ridge, degenerate)
    };

    let all: Vec<usize> = (0..sub.len()).collect();
    let pair = most_antipodal(sub, &all);
    let (i1, i2, min_dot) = match pair {
        Some(p) => p,
        None => {
            // Single sample: its tangent plane.
            degenerate = true;
            let patch = fit_subset(&all, &mut ridge, &mut degenerate);
            return SharpFit { procedure: LocalProcedure::Patch(patch), pieces: 1, ridge, degenerate };
        }
    };
    if min_dot >= params.theta_sharp {
        let patch = fit_subset(&all, &mut ridge, &mut degenerate);
        return SharpFit { procedure: LocalProcedure::Patch(patch), pieces: 1, ridge, degenerate };
    }

    let n1 = sub[i1].normal;
    let n2 = sub[i2].normal;
    let (mut s1, mut s2) = voronoi_split(sub, &all, &n1, &n2);
    let cross = n1.cross(&n2);
    let edge_dir = if cross.norm() > 1e-12 {
        cross.normalize()
    } else {
        Frame::from_normal(Point3::origin(), n1).unwrap().u
    };

    let max_edge_dot = sub.iter().map(|p| p.normal.dot(&edge_dir).abs()).fold(0.0f64, f64::max);
    if max_edge_dot <= params.theta_corner {
        let pieces = vec![
            fit_subset(&s1, &mut ridge, &mut degenerate),
            fit_subset(&s2, &mut ridge, &mut degenerate),
        ];
        return SharpFit {
            procedure: LocalProcedure::min_of_patches(pieces).unwrap(),
            pieces: 2,
            ridge,
            degenerate,
        };
    }

    // Corner: pull out the samples whose normals align with the edge
    // direction more than with either side.
    let mut s3 = Vec::new();
    for &i in &all {
        let ni = sub[i].normal;
        let e = ni.dot(&edge_dir).abs();
        if ni.dot(&n1).abs() < e && ni.dot(&n2).abs() < e {
            s3.push(i);
        }
    }
    s1.retain(|i| !s3.contains(i));
    s2.retain(|i| !s3.contains(i));
    if s3.is_empty() {
        degenerate = true;
        let pieces = vec![
            fit_subset(&s1, &mut ridge, &mut degenerate),
            fit_subset(&s2, &mut ridge, &mut degenerate),
        ];
        return SharpFit {
            procedure: LocalProcedure::min_of_patches(pieces).unwrap(),
            pieces: 2,
            ridge,
            degenerate,
        };
    }

    let (i3, i4, d34) = most_antipodal(sub, &s3).unwrap_or((s3[0], s3[0], 1.0));
    if d34 >= params.theta_sharp {
        let pieces = vec![
            fit_subset(&s1, &mut ridge, &mut degenerate),
            fit_subset(&s2, &mut ridge, &mut degenerate),
            fit_subset(&s3, &mut ridge, &mut degenerate),
        ];
        return SharpFit {
            procedure: LocalProcedure::min_of_patches(pieces).unwrap(),
            pieces: 3,
            ridge,
            degenerate,
        };
    }
    let (s4, s5) = voronoi_split(sub, &s3, &sub[i3].normal, &sub[i4].normal);
    let pieces = vec![
        fit_subset(&s1, &mut ridge, &mut degenerate),
        fit_subset(&s2, &mut ridge, &mut degenerate),
        fit_subset(&s4, &mut ridge, &mut degenerate),
        fit_subset(&s5, &mut ridge, &mut degenerate),
    ];
    SharpFit {
        procedure: LocalProcedure::min_of_patches(pieces).unwrap(),
        pieces: 4,
        ridge,
        degenerate,
    }
}

fn most_antipodal(sub: &[OrientedPoint], ids: &[usize]) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            let d = sub[i].normal.dot(&sub[j].normal);
            if best.map_or(true, |(_, _, bd)| d < bd) {
                best = Some((i, j, d));
            }
        }
    }
    best
}

/// Spherical Voronoi assignment: each sample goes to the reference normal
/// it is closer to (larger dot product, ties to the first).
fn voronoi_split(
    sub: &[OrientedPoint],
    ids: &[usize],
    n1: &Vector3<f64>,
    n2: &Vector3<f64>,
) -> (Vec<usize>, Vec<usize>) {
    let mut s1 = Vec::new();
    let mut s2 = Vec::new();
    for &i in ids {
        if sub[i].normal.dot(n1) >= sub[i].normal.dot(n2) {
            s1.push(i);
        } else {
            s2.push(i);
        }
    }
    (s1, s2)
}

fn fit_piece(
    sub: &[OrientedPoint],
    ids: &[usize],
    sphere: Ball3,
    ridge: &mut bool,
    degenerate: &mut bool,
) -> BivariatePatch {
    let mean: Vector3<f64> = ids
        .iter()
        .map(|&i| sub[i].normal * support_weight(&sub[i].position, &sphere))
        .sum();
    let normal = if mean.norm() > 1e-12 {
        mean
    } else if let Some(&i) = ids.first() {
        sub[i].normal
    } else {
        Vector3::z()
    };
    let frame = Frame::from_normal(sphere.centre, normal).unwrap();
    if ids.len() < 3 {
        // Plane through the subset's centroid with its mean normal.
        *degenerate = true;
        let c00 = if ids.is_empty() {
            0.0
        } else {
            let centroid: Vector3<f64> =
                ids.iter().map(|&i| sub[i].position.coords).sum::<Vector3<f64>>() / ids.len() as f64;
            (Point3::from(centroid) - sphere.centre).dot(&frame.n)
        };
        return BivariatePatch::from_coeffs(frame, [0.0, 0.0, 0.0, 0.0, 0.0, c00]);
    }
    let subset: Vec<OrientedPoint> = ids.iter().map(|&i| sub[i]).collect();
    let (patch, r) = fit_bivariate(&subset, sphere, frame);
    *ridge |= r;
    patch
}

/// Max Taubin distance `|f(p)| / |grad f(p)|` over the points; +inf when
/// a gradient collapses (forcing a subdivision upstream).
pub fn taubin_error(proc: &LocalProcedure, points: &[Point3<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for p in points {
        let (value, grad) = proc.eval_with_gradient(p);
        let g = grad.norm();
        if g < 1e-12 {
            return f64::INFINITY;
        }
        worst = worst.max(value.abs() / g);
    }
    worst
}

/// Per-cube build record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubeStats {
    pub depth: usize,
    /// Taubin error over the support points; `None` when the support
    /// sphere was empty.
    pub taubin: Option<f64>,
    /// Accepted at the depth cap without meeting the error threshold.
    pub depth_capped: bool,
    pub support: usize,
    pub case: FitCase,
}

#[derive(Debug, Clone)]
pub struct MpuBuild {
    pub rep: LocalImplicitRep,
    /// Parallel to `rep.patches`.
    pub stats: Vec<CubeStats>,
    pub max_taubin: f64,
    pub depth_capped_cubes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct CubeKey {
    depth: usize,
    idx: [u32; 3],
}

struct ScaleMap {
    origin: Vector3<f64>,
    scale: f64,
}

impl ScaleMap {
    fn to_scaled(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from((p.coords - self.origin) * self.scale)
    }

    fn from_scaled(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(p.coords / self.scale + self.origin)
    }
}

const ROOT_EDGE: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3): diagonal 1

fn cube_box(key: &CubeKey) -> Box3 {
    let edge = ROOT_EDGE / (1u64 << key.depth) as f64;
    let min = Point3::new(
        key.idx[0] as f64 * edge,
        key.idx[1] as f64 * edge,
        key.idx[2] as f64 * edge,
    );
    Box3 { min, max: min + Vector3::repeat(edge) }
}

enum CubeOutcome {
    Accept(LocalProcedure, CubeStats),
    Subdivide,
}

/// Builds an octree-based representation of the cloud. Deterministic:
/// identical inputs give identical output.
pub fn mpu_build(cloud: &OrientedPointCloud, params: &MpuParams) -> Result<MpuBuild> {
    params.validate()?;
    let bb = cloud.bounding_box();
    let centre = bb.centre();
    let mut edge = bb.extents().iter().fold(0.0f64, |m, &e| m.max(e));
    if edge <= 0.0 {
        edge = 1.0;
    }
    // Shrink slightly so every sample lands strictly inside the root cube.
    let scale = ROOT_EDGE * (1.0 - 1e-9) / edge;
    let map = ScaleMap { origin: centre.coords - Vector3::repeat(0.5 * ROOT_EDGE / scale), scale };

    let scaled: Vec<OrientedPoint> = cloud
        .points()
        .iter()
        .map(|p| OrientedPoint { position: map.to_scaled(&p.position), normal: p.normal })
        .collect();
    let positions: Vec<Point3<f64>> = scaled.iter().map(|p| p.position).collect();
    let kd = KdTree::build(&positions);

    let process = |key: &CubeKey| -> CubeOutcome {
        let cube = cube_box(key);
        let diag = cube.diagonal();
        let centre = cube.centre();
        let support_radius = params.alpha * diag;
        let support = kd.within_radius(&centre, support_radius);

        // Cubes with an empty support sphere are accepted without the
        // error gate, so their extrapolated fit must be sign-reliable:
        // enlarge past the sharp-path population threshold to keep them
        // on the anchored quadric / patch routes.
        let target = if support.is_empty() {
            (2 * params.n_min + 1).min(cloud.len())
        } else {
            params.n_min.min(cloud.len())
        };

        let (fit_ids, fit_radius) = if support.len() >= target {
            (support.clone(), support_radius)
        } else {
            let mut r = support_radius;
            let mut ids = support.clone();
            for _ in 0..200 {
                r *= 1.3;
                ids = kd.within_radius(&centre, r);
                if ids.len() >= target {
                    break;
                }
            }
            (ids, r)
        };
        let sub: Vec<OrientedPoint> = fit_ids.iter().map(|&i| scaled[i]).collect();
        let sphere = Ball3 { centre, radius: fit_radius };
        let outcome = local_fit(&sub, sphere, cube, params);
        let at_cap = key.depth >= params.max_depth;
        match outcome {
            FitOutcome::Fail => {
                if at_cap {
                    // Best-effort: the sharp path always produces something.
                    let sharp = classify_and_fit_sharp(&sub, sphere, params);
                    let taubin = if support.is_empty() {
                        None
                    } else {
                        let pts: Vec<Point3<f64>> = support.iter().map(|&i| positions[i]).collect();
                        Some(taubin_error(&sharp.procedure, &pts))
                    };
                    CubeOutcome::Accept(
                        sharp.procedure,
                        CubeStats {
                            depth: key.depth,
                            taubin,
                            depth_capped: true,
                            support: support.len(),
                            case: FitCase::Sharp(sharp.pieces),
                        },
                    )
                } else {
                    CubeOutcome::Subdivide
                }
            }
            FitOutcome::Fit(proc, info) => {
                if support.is_empty() {
                    return CubeOutcome::Accept(
                        proc,
                        CubeStats {
                            depth: key.depth,
                            taubin: None,
                            depth_capped: false,
                            support: 0,
                            case: info.case,
                        },
                    );
                }
                let pts: Vec<Point3<f64>> = support.iter().map(|&i| positions[i]).collect();
                let eps = taubin_error(&proc, &pts);
                if eps < params.eps0 || at_cap {
                    CubeOutcome::Accept(
                        proc,
                        CubeStats {
                            depth: key.depth,
                            taubin: Some(eps),
                            depth_capped: eps >= params.eps0,
                            support: support.len(),
                            case: info.case,
                        },
                    )
                } else {
                    CubeOutcome::Subdivide
                }
            }
        }
    };

    let mut frontier = vec![CubeKey { depth: 0, idx: [0, 0, 0] }];
    let mut accepted: Vec<(CubeKey, LocalProcedure, CubeStats)> = Vec::new();
    while !frontier.is_empty() {
        let results: Vec<CubeOutcome> = frontier.par_iter().map(process).collect();
        let mut next = Vec::new();
        for (key, outcome) in frontier.iter().zip(results) {
            match outcome {
                CubeOutcome::Accept(proc, stats) => accepted.push((*key, proc, stats)),
                CubeOutcome::Subdivide => {
                    for child in 0..8u32 {
                        next.push(CubeKey {
                            depth: key.depth + 1,
                            idx: [
                                key.idx[0] * 2 + (child & 1),
                                key.idx[1] * 2 + ((child >> 1) & 1),
                                key.idx[2] * 2 + ((child >> 2) & 1),
                            ],
                        });
                    }
                }
            }
        }
        frontier = next;
    }
    accepted.sort_by_key(|(key, _, _)| *key);

    let mut patches = Vec::with_capacity(accepted.len());
    let mut stats = Vec::with_capacity(accepted.len());
    let mut max_taubin = 0.0f64;
    let mut depth_capped_cubes = 0;
    for (key, proc, st) in accepted {
        let cube = cube_box(&key);
        let world_box = Box3 {
            min: map.from_scaled(&cube.min),
            max: map.from_scaled(&cube.max),
        };
        patches.push(RepPatch {
            area: Area::Box(world_box),
            procedure: unscale_procedure(&proc, &map),
            flagged: st.depth_capped,
        });
        if let Some(t) = st.taubin {
            if !st.depth_capped {
                max_taubin = max_taubin.max(t);
            }
        }
        depth_capped_cubes += st.depth_capped as usize;
        stats.push(st);
    }
    let root = cube_box(&CubeKey { depth: 0, idx: [0, 0, 0] });
    let bound = Box3 { min: map.from_scaled(&root.min), max: map.from_scaled(&root.max) };
    let rep = LocalImplicitRep {
        kind: RepKind::OctreeBased,
        patches,
        bound,
        fallback_cloud: None,
        levels: None,
    };
    Ok(MpuBuild { rep, stats, max_taubin, depth_capped_cubes })
}

/// Maps a procedure fitted in scaled coordinates back to world
/// coordinates, dividing by the scale factor so values keep a
/// signed-distance magnitude. The zero set and the Taubin distance are
/// unchanged by that constant factor.
fn unscale_procedure(proc: &LocalProcedure, map: &ScaleMap) -> LocalProcedure {
    match proc {
        LocalProcedure::GeneralQuadric(q) => LocalProcedure::GeneralQuadric(unscale_quadric(q, map)),
        LocalProcedure::Patch(b) => LocalProcedure::Patch(unscale_patch(b, map)),
        LocalProcedure::MinOfPatches(ps) => {
            LocalProcedure::MinOfPatches(ps.iter().map(|b| unscale_patch(b, map)).collect())
        }
    }
}

fn unscale_patch(patch: &BivariatePatch, map: &ScaleMap) -> BivariatePatch {
    let s = map.scale;
    let origin = map.from_scaled(&patch.frame.origin);
    let frame = Frame { origin, ..patch.frame };
    BivariatePatch {
        frame,
        c20: patch.c20 * s,
        c11: patch.c11 * s,
        c02: patch.c02 * s,
        c10: patch.c10,
        c01: patch.c01,
        c00: patch.c00 / s,
    }
}

fn unscale_quadric(q: &Quadric3, map: &ScaleMap) -> Quadric3 {
    let s = map.scale;
    let c = &q.coeffs;
    let a = Matrix3::new(
        c[4],
        c[7] / 2.0,
        c[8] / 2.0,
        c[7] / 2.0,
        c[5],
        c[9] / 2.0,
        c[8] / 2.0,
        c[9] / 2.0,
        c[6],
    );
    let b = Vector3::new(c[1], c[2], c[3]);
    let o = map.origin;
    // f_scaled(s (p - o)) / s, expanded in p.
    let a_new = a * s;
    let b_new = b - 2.0 * s * (a * o);
    let c_new = s * (o.dot(&(a * o))) - b.dot(&o) + c[0] / s;
    Quadric3 {
        coeffs: [
            c_new,
            b_new.x,
            b_new.y,
            b_new.z,
            a_new[(0, 0)],
            a_new[(1, 1)],
            a_new[(2, 2)],
            2.0 * a_new[(0, 1)],
            2.0 * a_new[(0, 2)],
            2.0 * a_new[(1, 2)],
        ],
    }
}
