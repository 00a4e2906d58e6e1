//! Queries against a swept-volume representation: point membership with
//! a signed value and witness, time witnesses, first/all ray
//! intersections, and boolean subtraction onto a sample grid.
//!
//! Membership follows the cell structure: locate the cell containing the
//! query, and for each (area, interval) entry minimize the area's
//! procedure along the inverse-moved query over the time windows where
//! the moved query actually lies inside the area. Entries not listed in
//! the located cell cannot contribute (the structure's completeness
//! invariant), so the verdict needs only that cell.

use crate::error::{Error, Result};
use crate::geometry::{Box3, LocalImplicitRep, RepKind};
use crate::grid::ScalarGrid;
use crate::slim;
use crate::solvers::{minimize_1d, SolverConfig};
use crate::sweep::contact::{containment_intervals_point, contact_intervals_segment, ContactCfg};
use crate::sweep::SweptVolumeRep;
use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub struct QueryConfig {
    pub solver: SolverConfig,
    /// Stop scanning entries once a value below `-10 eps_value` is found;
    /// the verdict is unchanged, the reported distance becomes an upper
    /// bound.
    pub early_exit: bool,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self { solver: SolverConfig::default(), early_exit: true }
    }
}

fn contact_cfg(rep: &SweptVolumeRep) -> ContactCfg {
    // Queries always gate with exact clearances; fast mode only affects
    // the preprocessing structure.
    ContactCfg { tol: rep.params.contact_tol, fast: false }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembershipResult {
    pub inside: bool,
    /// Minimal gated procedure value; an approximate signed distance when
    /// the base procedures approximate distances, infinity when no entry
    /// ever contains the query, and the distance to the bounding box for
    /// far-away queries.
    pub signed_distance: f64,
    /// Query fell outside the swept bounding box.
    pub far_away: bool,
    /// Early exit fired: `signed_distance` is only an upper bound.
    pub distance_upper_bound: bool,
    /// (patch index, time) attaining the minimum.
    pub witness: Option<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Point3<f64>, direction: Vector3<f64>) -> Result<Self> {
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("ray direction must be unit length"));
        }
        if !origin.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("ray origin must be finite"));
        }
        Ok(Self { origin, direction })
    }

    pub fn at(&self, s: f64) -> Point3<f64> {
        self.origin + self.direction * s
    }
}

/// Alg-5 style point ownership with a minimized signed value.
pub fn point_membership(rep: &SweptVolumeRep, p: &Point3<f64>, cfg: &QueryConfig) -> MembershipResult {
    if !rep.bound.contains(p) {
        return MembershipResult {
            inside: false,
            signed_distance: rep.bound.distance(p),
            far_away: true,
            distance_upper_bound: false,
            witness: None,
        };
    }
    let (cell, _) = rep.locate(p);
    let cell = match cell {
        Some(c) => c,
        None => {
            return MembershipResult {
                inside: false,
                signed_distance: rep.bound.distance(p),
                far_away: true,
                distance_upper_bound: false,
                witness: None,
            }
        }
    };
    let ccfg = contact_cfg(rep);
    let mut best = f64::INFINITY;
    let mut witness = None;
    let mut truncated = false;
    'entries: for entry in rep.cells[cell].entries.iter() {
        let area = &rep.base.patches[entry.patch].area;
        let gates =
            containment_intervals_point(p, &rep.motion, area, &ccfg, &[(entry.t0, entry.t1)]);
        for (g0, g1) in gates {
            let procedure = &rep.base.patches[entry.patch].procedure;
            let (t_star, value) = minimize_1d(
                &mut |t| procedure.eval(&rep.motion.eval_unchecked(t).inverse_apply(p)),
                g0,
                g1,
                &cfg.solver,
            );
            if value < best {
                best = value;
                witness = Some((entry.patch, t_star));
            }
            if cfg.early_exit && best <= -10.0 * cfg.solver.eps_value {
                truncated = true;
                break 'entries;
            }
        }
    }
    MembershipResult {
        inside: best <= 0.0,
        signed_distance: best,
        far_away: false,
        distance_upper_bound: truncated,
        witness,
    }
}

/// Batch variant with deterministic output ordering.
pub fn point_membership_batch(
    rep: &SweptVolumeRep,
    points: &[Point3<f64>],
    cfg: &QueryConfig,
) -> Vec<MembershipResult> {
    points.par_iter().map(|p| point_membership(rep, p, cfg)).collect()
}

/// Maximal intervals of `{t : query inside the moved base at time t}`.
pub fn time_witnesses(rep: &SweptVolumeRep, p: &Point3<f64>, cfg: &QueryConfig) -> Vec<(f64, f64)> {
    if !rep.bound.contains(p) {
        return Vec::new();
    }
    let (cell, _) = rep.locate(p);
    let cell = match cell {
        Some(c) => c,
        None => return Vec::new(),
    };
    let ccfg = contact_cfg(rep);
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    for entry in rep.cells[cell].entries.iter() {
        let area = &rep.base.patches[entry.patch].area;
        let procedure = &rep.base.patches[entry.patch].procedure;
        let gates =
            containment_intervals_point(p, &rep.motion, area, &ccfg, &[(entry.t0, entry.t1)]);
        for (g0, g1) in gates {
            let phi = |t: f64| procedure.eval(&rep.motion.eval_unchecked(t).inverse_apply(p));
            intervals.extend(nonpositive_intervals(&phi, g0, g1, &cfg.solver));
        }
    }
    merge_intervals(intervals, ccfg.tol)
}

/// Sign-bracketing of a smooth function over `[a, b]`: samples at the
/// configured density plus the interval minimizer, bisects every sign
/// change, and assembles the nonpositive stretches.
fn nonpositive_intervals(
    phi: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    solver: &SolverConfig,
) -> Vec<(f64, f64)> {
    if b <= a {
        return if phi(a) <= 0.0 { vec![(a, a)] } else { Vec::new() };
    }
    let n = ((solver.time_samples_per_unit as f64) * (b - a)).ceil().max(8.0) as usize;
    let mut samples: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
    // A dip between samples is caught by seeding the global minimizer.
    let (t_min, v_min) = minimize_1d(&mut { phi }, a, b, solver);
    if v_min <= 0.0 {
        samples.push(t_min);
        samples.sort_by(|x, y| x.partial_cmp(y).unwrap());
    }
    let refine = |lo: f64, hi: f64| -> f64 {
        let (mut lo, mut hi) = (lo, hi);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if (phi(lo) <= 0.0) == (phi(mid) <= 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= solver.eps_root {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    let mut out = Vec::new();
    let mut open: Option<f64> = None;
    let mut prev = samples[0];
    let mut prev_in = phi(prev) <= 0.0;
    if prev_in {
        open = Some(a);
    }
    for &t in &samples[1..] {
        let now_in = phi(t) <= 0.0;
        if now_in != prev_in {
            let boundary = refine(prev, t);
            if now_in {
                open = Some(boundary);
            } else if let Some(s) = open.take() {
                out.push((s, boundary));
            }
        }
        prev = t;
        prev_in = now_in;
    }
    if let Some(s) = open {
        out.push((s, b));
    }
    out
}

fn merge_intervals(mut intervals: Vec<(f64, f64)>, gap: f64) -> Vec<(f64, f64)> {
    intervals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut out: Vec<(f64, f64)> = Vec::new();
    for iv in intervals {
        match out.last_mut() {
            Some(last) if iv.0 <= last.1 + gap => last.1 = last.1.max(iv.1),
            _ => out.push(iv),
        }
    }
    out
}

/// Entry/exit parameters of a ray against a box, if any.
fn ray_box_span(ray: &Ray, b: &Box3) -> Option<(f64, f64)> {
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    for k in 0..3 {
        let d = ray.direction[k];
        let o = ray.origin[k];
        if d.abs() < 1e-300 {
            if o < b.min[k] || o > b.max[k] {
                return None;
            }
            continue;
        }
        let (t0, t1) = ((b.min[k] - o) / d, (b.max[k] - o) / d);
        let (t0, t1) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        lo = lo.max(t0);
        hi = hi.min(t1);
        if lo > hi {
            return None;
        }
    }
    Some((lo, hi))
}

/// Cells hit by the ray, ordered by entry parameter.
fn cells_along_ray(rep: &SweptVolumeRep, ray: &Ray) -> Vec<(usize, f64, f64)> {
    let mut hits: Vec<(usize, f64, f64)> = rep
        .cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| ray_box_span(ray, &c.bounds).map(|(s0, s1)| (i, s0, s1)))
        .collect();
    hits.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    hits
}

/// Gated field value along the ray at parameter `s`, restricted to one
/// cell's entries and their precomputed time windows. `None` when no
/// entry contains the moved point at any admissible time.
fn gated_value_at(
    rep: &SweptVolumeRep,
    entries: &[(usize, Vec<(f64, f64)>)],
    p: &Point3<f64>,
    ccfg: &ContactCfg,
    solver: &SolverConfig,
) -> Option<f64> {
    let mut best = None;
    for (patch_idx, windows) in entries {
        if windows.is_empty() {
            continue;
        }
        let area = &rep.base.patches[*patch_idx].area;
        let procedure = &rep.base.patches[*patch_idx].procedure;
        let gates = containment_intervals_point(p, &rep.motion, area, ccfg, windows);
        for (g0, g1) in gates {
            let (_, value) = minimize_1d(
                &mut |t| procedure.eval(&rep.motion.eval_unchecked(t).inverse_apply(p)),
                g0,
                g1,
                solver,
            );
            best = Some(best.map_or(value, |b: f64| b.min(value)));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub s: f64,
    pub point: Point3<f64>,
}

/// First intersection of the ray with the swept solid: cells are walked
/// in entry order and within each cell the minimal field-nonpositive ray
/// parameter over all entries is taken.
pub fn ray_intersect_first(rep: &SweptVolumeRep, ray: &Ray, cfg: &QueryConfig) -> Option<RayHit> {
    let ccfg = contact_cfg(rep);
    for (cell_idx, s0, s1) in cells_along_ray(rep, ray) {
        if let Some(s) = first_hit_in_cell(rep, ray, cell_idx, s0, s1, &ccfg, cfg) {
            return Some(RayHit { s, point: ray.at(s) });
        }
    }
    None
}

fn cell_entry_windows(
    rep: &SweptVolumeRep,
    ray: &Ray,
    cell_idx: usize,
    s0: f64,
    s1: f64,
    ccfg: &ContactCfg,
) -> Vec<(usize, Vec<(f64, f64)>)> {
    let (p0, p1) = (ray.at(s0), ray.at(s1));
    rep.cells[cell_idx]
        .entries
        .iter()
        .map(|entry| {
            let area = &rep.base.patches[entry.patch].area;
            let windows = contact_intervals_segment(
                (&p0, &p1),
                &rep.motion,
                area,
                ccfg,
                &[(entry.t0, entry.t1)],
            );
            (entry.patch, windows)
        })
        .collect()
}

fn first_hit_in_cell(
    rep: &SweptVolumeRep,
    ray: &Ray,
    cell_idx: usize,
    s0: f64,
    s1: f64,
    ccfg: &ContactCfg,
    cfg: &QueryConfig,
) -> Option<f64> {
    let entries = cell_entry_windows(rep, ray, cell_idx, s0, s1, ccfg);
    if entries.iter().all(|(_, w)| w.is_empty()) {
        return None;
    }
    let diag = rep.cells[cell_idx].bounds.diagonal();
    let step = diag / 64.0;
    let inside = |s: f64| -> bool {
        gated_value_at(rep, &entries, &ray.at(s), ccfg, &cfg.solver).is_some_and(|v| v <= 0.0)
    };
    let mut s = s0;
    let mut prev = s;
    let mut prev_in = inside(s);
    if prev_in {
        return Some(s0);
    }
    while s < s1 {
        s = (s + step).min(s1);
        let now_in = inside(s);
        if now_in {
            return Some(refine_crossing(&inside, prev, s, diag));
        }
        prev = s;
        prev_in = now_in;
    }
    let _ = prev_in;
    None
}

fn refine_crossing(inside: &dyn Fn(f64) -> bool, mut lo: f64, mut hi: f64, scale: f64) -> f64 {
    // lo is outside, hi is inside.
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * (1.0 + scale) {
            break;
        }
    }
    hi
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryHit {
    pub s: f64,
    pub point: Point3<f64>,
    pub entering: bool,
    /// Paired with an opposite crossing closer than the dedup width.
    pub grazing: bool,
}

/// All boundary crossings along the ray, ordered by parameter and
/// deduplicated within `1e-6` of the cell diagonal.
pub fn ray_intersect_all(rep: &SweptVolumeRep, ray: &Ray, cfg: &QueryConfig) -> Vec<BoundaryHit> {
    let ccfg = contact_cfg(rep);
    let mut crossings: Vec<(f64, bool)> = Vec::new();
    let mut dedup_width = 0.0f64;
    for (cell_idx, s0, s1) in cells_along_ray(rep, ray) {
        let entries = cell_entry_windows(rep, ray, cell_idx, s0, s1, &ccfg);
        if entries.iter().all(|(_, w)| w.is_empty()) {
            continue;
        }
        let diag = rep.cells[cell_idx].bounds.diagonal();
        dedup_width = dedup_width.max(1e-6 * diag);
        let step = diag / 64.0;
        let inside = |s: f64| -> bool {
            gated_value_at(rep, &entries, &ray.at(s), &ccfg, &cfg.solver).is_some_and(|v| v <= 0.0)
        };
        let mut s = s0;
        let mut prev = s;
        let mut prev_in = inside(s);
        while s < s1 {
            s = (s + step).min(s1);
            let now_in = inside(s);
            if now_in != prev_in {
                let boundary = if now_in {
                    refine_crossing(&inside, prev, s, diag)
                } else {
                    // Mirror the search for a leaving crossing.
                    let outside = |x: f64| !inside(x);
                    refine_crossing(&outside, prev, s, diag)
                };
                crossings.push((boundary, now_in));
            }
            prev = s;
            prev_in = now_in;
        }
    }
    crossings.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // Cross-cell duplicates collapse; an enter/leave pair within the
    // width marks a graze.
    let mut out: Vec<BoundaryHit> = Vec::new();
    let mut i = 0;
    while i < crossings.len() {
        let (s, entering) = crossings[i];
        let mut grazing = false;
        let mut j = i + 1;
        while j < crossings.len() && crossings[j].0 - s <= dedup_width {
            if crossings[j].1 != entering {
                grazing = true;
            }
            j += 1;
        }
        out.push(BoundaryHit { s, point: ray.at(s), entering, grazing });
        i = j;
    }
    out
}

/// Signed field of the swept volume for boolean work: the membership
/// value inside the bound, the bound distance outside, and the bound
/// diagonal standing in for "never reached" queries whose value would
/// otherwise be infinite.
pub fn swept_field(rep: &SweptVolumeRep, p: &Point3<f64>, cfg: &QueryConfig) -> f64 {
    let m = point_membership(rep, p, cfg);
    if m.signed_distance.is_finite() {
        m.signed_distance
    } else {
        rep.bound.diagonal().max(1.0)
    }
}

/// An object operand of the subtraction: either a base representation or
/// another swept volume.
pub enum SubtractObject<'a> {
    Base(&'a LocalImplicitRep),
    Swept(&'a SweptVolumeRep),
}

impl SubtractObject<'_> {
    /// Signed indicator field of the object.
    pub fn field(&self, p: &Point3<f64>, cfg: &QueryConfig) -> f64 {
        match self {
            SubtractObject::Base(rep) => base_field(rep, p),
            SubtractObject::Swept(rep) => swept_field(rep, p, cfg),
        }
    }

    pub fn member(&self, p: &Point3<f64>, cfg: &QueryConfig) -> bool {
        match self {
            SubtractObject::Base(rep) => match (rep.kind, &rep.fallback_cloud) {
                (RepKind::BallCover, Some(_)) => slim::blended_eval(rep, p).0 <= 0.0,
                _ => rep.contains(p),
            },
            SubtractObject::Swept(rep) => point_membership(rep, p, cfg).inside,
        }
    }

    pub fn bound(&self) -> Box3 {
        match self {
            SubtractObject::Base(rep) => rep.bound,
            SubtractObject::Swept(rep) => rep.bound,
        }
    }
}

/// Signed indicator of a base representation: blended for generated ball
/// covers, the minimal covering-procedure value otherwise, and the
/// distance to the nearest area when uncovered.
fn base_field(rep: &LocalImplicitRep, p: &Point3<f64>) -> f64 {
    if rep.kind == RepKind::BallCover && rep.fallback_cloud.is_some() {
        return slim::blended_eval(rep, p).0;
    }
    match rep.membership_value(p) {
        Some(v) => v,
        None => rep
            .patches
            .iter()
            .map(|patch| patch.area.distance(p))
            .fold(f64::INFINITY, f64::min),
    }
}

#[derive(Debug, Clone)]
pub struct SubtractResult {
    pub grid: ScalarGrid,
    /// Object and swept bounds do not even overlap.
    pub disjoint_bounds: bool,
    /// Samples with field <= 0 (inside the difference).
    pub inside_count: usize,
}

/// Samples `max(field_object, -field_swept)` over the grid: the implicit
/// form of the set difference `object minus swept`.
pub fn subtract(
    object: &SubtractObject,
    swept: &SweptVolumeRep,
    dims: [usize; 3],
    bounds: Box3,
    cfg: &QueryConfig,
) -> Result<SubtractResult> {
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::invalid("subtraction grid needs at least 2 nodes per axis"));
    }
    let disjoint_bounds = !object.bound().overlaps(&swept.bound);
    let coords: Vec<Point3<f64>> = grid_points(dims, &bounds);
    let values: Vec<f64> = coords
        .par_iter()
        .map(|p| object.field(p, cfg).max(-swept_field(swept, p, cfg)))
        .collect();
    let inside_count = values.iter().filter(|&&v| v <= 0.0).count();
    Ok(SubtractResult {
        grid: ScalarGrid::new(dims, bounds, values)?,
        disjoint_bounds,
        inside_count,
    })
}

/// Pointwise oracle for the same difference.
pub fn subtract_member(
    object: &SubtractObject,
    swept: &SweptVolumeRep,
    p: &Point3<f64>,
    cfg: &QueryConfig,
) -> bool {
    object.member(p, cfg) && !point_membership(swept, p, cfg).inside
}

/// Samples the swept field alone onto a grid.
pub fn export_grid(
    rep: &SweptVolumeRep,
    dims: [usize; 3],
    bounds: Box3,
    cfg: &QueryConfig,
) -> Result<ScalarGrid> {
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::invalid("export grid needs at least 2 nodes per axis"));
    }
    let coords = grid_points(dims, &bounds);
    let values: Vec<f64> = coords.par_iter().map(|p| swept_field(rep, p, cfg)).collect();
    ScalarGrid::new(dims, bounds, values)
}

fn grid_points(dims: [usize; 3], bounds: &Box3) -> Vec<Point3<f64>> {
    let mut coords = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for iz in 0..dims[2] {
        for iy in 0..dims[1] {
            for ix in 0..dims[0] {
                coords.push(Point3::new(
                    bounds.min.x + (bounds.max.x - bounds.min.x) * ix as f64 / (dims[0] - 1) as f64,
                    bounds.min.y + (bounds.max.y - bounds.min.y) * iy as f64 / (dims[1] - 1) as f64,
                    bounds.min.z + (bounds.max.z - bounds.min.z) * iz as f64 / (dims[2] - 1) as f64,
                ));
            }
        }
    }
    coords
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Area;
    use crate::motion::{capsule_example, PiecewisePoly, RigidMotion};
    use crate::sweep::{build_swept_rep, SweepParams};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn capsule_swept() -> SweptVolumeRep {
        let (rep, motion) = capsule_example();
        build_swept_rep(&rep, &motion, &SweepParams { time_samples: 64, ..Default::default() })
            .unwrap()
    }

    /// Membership of the capsule base solid (min over covering areas).
    fn base_member(rep: &LocalImplicitRep, p: &Point3<f64>) -> bool {
        rep.contains(p)
    }

    #[test]
    fn membership_examples() {
        let swept = capsule_swept();
        let cfg = QueryConfig::default();

        let mid = point_membership(&swept, &Point3::new(0.0, 8.0, 0.0), &cfg);
        assert!(mid.inside, "mid-path axis point must be inside");
        assert!(mid.witness.is_some());

        let far = point_membership(&swept, &Point3::new(100.0, 100.0, 100.0), &cfg);
        assert!(!far.inside && far.far_away);
        assert!(far.signed_distance > 0.0);
    }

    #[test]
    fn identity_motion_reduces_to_base() {
        let (base, _) = capsule_example();
        let motion = RigidMotion::identity(0.0, 1.0);
        let swept = build_swept_rep(&base, &motion, &SweepParams::default()).unwrap();
        let cfg = QueryConfig { early_exit: false, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let p = Point3::new(
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let got = point_membership(&swept, &p, &cfg);
            assert_eq!(got.inside, base_member(&base, &p), "mismatch at {p:?}");
            if let Some(v) = base.membership_value(&p) {
                assert_eq!(got.signed_distance, v, "value differs at {p:?}");
            }
        }
    }

    #[test]
    fn constant_motion_reduces_to_displaced_base() {
        let (base, _) = capsule_example();
        let zero = PiecewisePoly::constant(0.0, 0.0, 1.0);
        let motion = RigidMotion::new(
            PiecewisePoly::constant(1.3, 0.0, 1.0),
            PiecewisePoly::constant(-0.4, 0.0, 1.0),
            PiecewisePoly::constant(0.7, 0.0, 1.0),
            PiecewisePoly::constant(0.3, 0.0, 1.0),
            PiecewisePoly::constant(-1.1, 0.0, 1.0),
            zero,
        )
        .unwrap();
        let swept = build_swept_rep(&base, &motion, &SweepParams::default()).unwrap();
        let cfg = QueryConfig { early_exit: false, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let p = Point3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
            let got = point_membership(&swept, &p, &cfg);
            let pulled = motion.inverse_apply(0.5, &p).unwrap();
            assert_eq!(got.inside, base_member(&base, &pulled), "mismatch at {p:?}");
        }
    }

    #[test]
    fn early_exit_keeps_the_verdict() {
        let swept = capsule_swept();
        let eager = QueryConfig { early_exit: true, ..Default::default() };
        let full = QueryConfig { early_exit: false, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..300 {
            let p = Point3::new(
                rng.gen_range(-3.5..3.5),
                rng.gen_range(-3.5..19.5),
                rng.gen_range(-3.5..3.5),
            );
            let a = point_membership(&swept, &p, &eager);
            let b = point_membership(&swept, &p, &full);
            assert_eq!(a.inside, b.inside, "verdict changed at {p:?}");
            if a.distance_upper_bound {
                assert!(a.signed_distance >= b.signed_distance - 1e-12);
            } else {
                assert_eq!(a.signed_distance, b.signed_distance);
            }
        }
    }

    #[test]
    fn membership_matches_dense_time_oracle() {
        let (base, motion) = capsule_example();
        let swept = capsule_swept();
        let cfg = QueryConfig::default();
        // Shared isometry grid for the oracle.
        let steps = 10_000;
        let isos: Vec<_> = (0..=steps).map(|k| motion.eval_unchecked(k as f64 / steps as f64)).collect();
        let diag = swept.bound.diagonal();
        let band = 1e-3 * diag;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut tested = 0;
        let mut skipped = 0;
        for _ in 0..10_000 {
            let p = Point3::new(
                rng.gen_range(swept.bound.min.x..=swept.bound.max.x),
                rng.gen_range(swept.bound.min.y..=swept.bound.max.y),
                rng.gen_range(swept.bound.min.z..=swept.bound.max.z),
            );
            let mut oracle_inside = false;
            let mut min_abs = f64::INFINITY;
            for iso in &isos {
                let q = iso.inverse_apply(&p);
                if let Some(v) = base.membership_value(&q) {
                    oracle_inside |= v <= 0.0;
                    min_abs = min_abs.min(v.abs());
                }
            }
            if min_abs < band {
                skipped += 1;
                continue;
            }
            tested += 1;
            let got = point_membership(&swept, &p, &cfg);
            assert_eq!(got.inside, oracle_inside, "probe {p:?} disagrees outside the band");
        }
        assert!(tested > 8000, "band skipped too many probes ({skipped})");
    }

    #[test]
    fn witnesses_examples_and_consistency() {
        let (base, motion) = capsule_example();
        let cfg = QueryConfig::default();

        // Identity motion: a point inside the base is inside at all times.
        let idswept =
            build_swept_rep(&base, &RigidMotion::identity(0.0, 1.0), &SweepParams::default())
                .unwrap();
        let w = time_witnesses(&idswept, &Point3::origin(), &cfg);
        assert_eq!(w.len(), 1);
        assert!((w[0].0 - 0.0).abs() < 1e-9 && (w[0].1 - 1.0).abs() < 1e-9);

        // Outside the swept volume: empty.
        let swept = capsule_swept();
        assert!(time_witnesses(&swept, &Point3::new(100.0, 0.0, 0.0), &cfg).is_empty());

        // Dense time-scan oracle at the reference probe.
        let p = Point3::new(0.0, 8.0, 0.0);
        let got = time_witnesses(&swept, &p, &cfg);
        let mut oracle: Vec<(f64, f64)> = Vec::new();
        let steps = 100_000;
        let mut open: Option<f64> = None;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let q = motion.eval_unchecked(t).inverse_apply(&p);
            let inside = base.contains(&q);
            if inside && open.is_none() {
                open = Some(t);
            }
            if !inside {
                if let Some(s) = open.take() {
                    oracle.push((s, (k - 1) as f64 / steps as f64));
                }
            }
        }
        if let Some(s) = open {
            oracle.push((s, 1.0));
        }
        assert_eq!(got.len(), oracle.len(), "{got:?} vs {oracle:?}");
        for ((g0, g1), (o0, o1)) in got.iter().zip(&oracle) {
            assert!((g0 - o0).abs() < 1e-4, "{g0} vs {o0}");
            assert!((g1 - o1).abs() < 1e-4, "{g1} vs {o1}");
        }

        // Witness/membership consistency off the boundary band.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..200 {
            let p = Point3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..19.0),
                rng.gen_range(-3.0..3.0),
            );
            let m = point_membership(&swept, &p, &QueryConfig { early_exit: false, ..cfg });
            if m.signed_distance.abs() < 1e-3 {
                continue;
            }
            let w = time_witnesses(&swept, &p, &cfg);
            assert_eq!(m.inside, !w.is_empty(), "at {p:?}");
        }
    }

    #[test]
    fn ray_first_hit_examples() {
        let swept = capsule_swept();
        let cfg = QueryConfig::default();

        // Straight down the sweep axis from below.
        let ray = Ray::new(Point3::new(0.0, -10.0, 0.0), Vector3::y()).unwrap();
        let hit = ray_intersect_first(&swept, &ray, &cfg).expect("must hit the sweep");
        // Brute-force march oracle with fine steps.
        let oracle = ray_march_oracle(&swept, &ray, &cfg, 40.0, 1e-4);
        let first = oracle.first().copied().unwrap();
        assert!((hit.s - first).abs() < 1e-3, "hit {} vs oracle {first}", hit.s);

        // A ray missing the bound entirely.
        let miss = Ray::new(Point3::new(100.0, 0.0, 0.0), Vector3::y()).unwrap();
        assert!(ray_intersect_first(&swept, &miss, &cfg).is_none());
    }

    #[test]
    fn identity_rays_match_base_oracle() {
        let (base, _) = capsule_example();
        let swept =
            build_swept_rep(&base, &RigidMotion::identity(0.0, 1.0), &SweepParams::default())
                .unwrap();
        let cfg = QueryConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut hits = 0;
        for _ in 0..100 {
            let origin = Point3::new(
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
            );
            let target = Point3::new(
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
            );
            let dir = (target - origin).normalize();
            let ray = Ray::new(origin, dir).unwrap();
            let got = ray_intersect_first(&swept, &ray, &cfg);
            // Base-only oracle: march the base membership along the ray.
            let mut oracle = None;
            let mut s = 0.0;
            let mut prev = s;
            let step = 1e-3;
            let mut prev_in = base.contains(&ray.at(s));
            if prev_in {
                oracle = Some(0.0);
            }
            while oracle.is_none() && s < 25.0 {
                s += step;
                let now_in = base.contains(&ray.at(s));
                if now_in && !prev_in {
                    // refine
                    let (mut lo, mut hi) = (prev, s);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if base.contains(&ray.at(mid)) {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    oracle = Some(hi);
                }
                prev = s;
                prev_in = now_in;
            }
            match (got, oracle) {
                (Some(h), Some(o)) => {
                    hits += 1;
                    assert!((h.s - o).abs() < 1e-6, "hit {} vs oracle {o}", h.s);
                }
                (None, None) => {}
                (g, o) => panic!("hit mismatch: {g:?} vs {o:?}"),
            }
        }
        assert!(hits > 20, "too few hitting rays ({hits}) for a meaningful test");
    }

    /// March oracle: first parameters where the swept membership flips.
    fn ray_march_oracle(
        rep: &SweptVolumeRep,
        ray: &Ray,
        cfg: &QueryConfig,
        reach: f64,
        step: f64,
    ) -> Vec<f64> {
        let mut out = Vec::new();
        let mut prev_in = point_membership(rep, &ray.at(0.0), cfg).inside;
        if prev_in {
            out.push(0.0);
        }
        let mut s = 0.0;
        while s < reach {
            let next = s + step;
            let now_in = point_membership(rep, &ray.at(next), cfg).inside;
            if now_in != prev_in {
                out.push(0.5 * (s + next));
            }
            s = next;
            prev_in = now_in;
        }
        out
    }

    #[test]
    fn ray_all_hits_examples() {
        let cfg = QueryConfig::default();
        // Static ball: a transversal ray crosses twice.
        let (base, _) = capsule_example();
        let swept =
            build_swept_rep(&base, &RigidMotion::identity(0.0, 1.0), &SweepParams::default())
                .unwrap();
        let ray = Ray::new(Point3::new(-10.0, 0.0, 0.0), Vector3::x()).unwrap();
        let hits = ray_intersect_all(&swept, &ray, &cfg);
        let entering: Vec<_> = hits.iter().filter(|h| h.entering).collect();
        let leaving: Vec<_> = hits.iter().filter(|h| !h.entering).collect();
        assert_eq!(entering.len(), 1, "{hits:?}");
        assert_eq!(leaving.len(), 1, "{hits:?}");

        // Reference sweep: transversal ray against the march oracle.
        let swept = capsule_swept();
        let ray = Ray::new(Point3::new(-8.0, 8.0, 0.0), Vector3::x()).unwrap();
        let hits = ray_intersect_all(&swept, &ray, &cfg);
        let oracle = ray_march_oracle(&swept, &ray, &cfg, 20.0, 1e-4);
        assert_eq!(hits.len(), oracle.len(), "{hits:?} vs {oracle:?}");
        for (h, o) in hits.iter().zip(&oracle) {
            assert!((h.s - o).abs() < 1e-3, "{} vs {o}", h.s);
        }
        // Ray/point consistency around the first non-grazing hit.
        if let Some(first) = hits.first().filter(|h| !h.grazing) {
            let delta = 1e-4 * swept.bound.diagonal();
            let before = point_membership(&swept, &ray.at(first.s - delta), &cfg);
            let after = point_membership(&swept, &ray.at(first.s + delta), &cfg);
            assert!(!before.inside && after.inside);
        }
    }

    #[test]
    fn subtract_identities() {
        let swept = capsule_swept();
        let cfg = QueryConfig::default();
        let dims = [24, 40, 24];

        // X minus X is empty everywhere sampled.
        let this = SubtractObject::Swept(&swept);
        let result = subtract(&this, &swept, dims, swept.bound, &cfg).unwrap();
        assert_eq!(result.inside_count, 0, "self-subtraction left samples inside");

        // A far-away object is untouched by the subtraction.
        let (mut far_base, _) = capsule_example();
        let shift = Vector3::new(200.0, 0.0, 0.0);
        for patch in &mut far_base.patches {
            if let Area::Ball(b) = &mut patch.area {
                b.centre += shift;
            }
        }
        far_base.bound = Box3 { min: far_base.bound.min + shift, max: far_base.bound.max + shift };
        let far_obj = SubtractObject::Base(&far_base);
        let result = subtract(&far_obj, &swept, [8, 8, 8], far_base.bound, &cfg).unwrap();
        assert!(result.disjoint_bounds);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = Point3::new(
                rng.gen_range(far_base.bound.min.x..=far_base.bound.max.x),
                rng.gen_range(far_base.bound.min.y..=far_base.bound.max.y),
                rng.gen_range(far_base.bound.min.z..=far_base.bound.max.z),
            );
            assert_eq!(subtract_member(&far_obj, &swept, &p, &cfg), far_base.contains(&p));
        }
    }

    #[test]
    fn export_grid_shape() {
        let swept = capsule_swept();
        let grid = export_grid(&swept, [4, 5, 6], swept.bound, &QueryConfig::default()).unwrap();
        assert_eq!(grid.dims, [4, 5, 6]);
        assert_eq!(grid.values.len(), 120);
    }
}
