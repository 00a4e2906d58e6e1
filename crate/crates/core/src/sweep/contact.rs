//! Contact-interval solving between moving areas and fixed cells.
//!
//! Everything reduces to a continuous clearance function `g(t)` (distance
//! minus radius, or a separating-axis gap) with a known Lipschitz bound.
//! A conservative-advancement march over the motion domain can then skip
//! time spans where contact is provably impossible, and the spans it
//! cannot exclude become candidate contact intervals whose endpoints are
//! refined by bisection on the active contact equation. Intervals may
//! over-cover (they are padded outward by the contact tolerance and
//! questionable grazing spans are kept), but they never under-cover:
//! every `t` with `g(t) <= 0` lies inside some returned interval.

use crate::geometry::{Area, Ball3, Box3};
use crate::motion::RigidMotion;
use crate::solvers::{bisect_root, SolverConfig};
use nalgebra::{Matrix3, Point3, Vector3};

/// Contact solving options: endpoint tolerance in time units and the
/// face-equations-only fast mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactCfg {
    pub tol: f64,
    pub fast: bool,
}

impl Default for ContactCfg {
    fn default() -> Self {
        Self { tol: 1e-7, fast: false }
    }
}

fn solver_for(tol: f64) -> SolverConfig {
    SolverConfig { eps_root: (tol * 1e-2).max(1e-15), eps_value: 1e-300, ..Default::default() }
}

/// Merges, pads and clamps raw intervals: gaps smaller than `2 tol`
/// collapse and every interval grows by `pad` on each side.
pub fn normalize_intervals(
    mut raw: Vec<(f64, f64)>,
    pad: f64,
    merge_gap: f64,
    domain: (f64, f64),
) -> Vec<(f64, f64)> {
    for iv in &mut raw {
        iv.0 = (iv.0 - pad).max(domain.0);
        iv.1 = (iv.1 + pad).min(domain.1);
    }
    raw.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
    for iv in raw {
        match out.last_mut() {
            Some(last) if iv.0 <= last.1 + merge_gap => last.1 = last.1.max(iv.1),
            _ => out.push(iv),
        }
    }
    out
}

/// Subtracts `holes` from `[a, b]`, returning the remaining windows.
pub fn subtract_windows(a: f64, b: f64, holes: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted = holes.to_vec();
    sorted.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut out = Vec::new();
    let mut cursor = a;
    for (h0, h1) in sorted {
        if h1 <= cursor {
            continue;
        }
        if h0 > b {
            break;
        }
        if h0 > cursor {
            out.push((cursor, h0.min(b)));
        }
        cursor = cursor.max(h1);
        if cursor >= b {
            break;
        }
    }
    if cursor < b {
        out.push((cursor, b));
    }
    out
}

/// One candidate contact region accumulated by the march.
struct Region {
    first: f64,
    last: f64,
    /// Last sample with g > 0 seen before the first nonpositive sample.
    entry_pos: Option<f64>,
    first_nonpos: Option<f64>,
    last_nonpos: Option<f64>,
    /// First sample with g > 0 seen after the last nonpositive sample.
    exit_pos: Option<f64>,
}

/// Conservative-advancement march of `g` over `[a, b]` with Lipschitz
/// bound `lip`. `refine(t_pos, t_nonpos)` polishes a sign-change bracket
/// (the first argument always has g > 0, the second g <= 0).
fn march(
    g: &mut dyn FnMut(f64) -> f64,
    a: f64,
    b: f64,
    lip: f64,
    tol: f64,
    refine: &mut dyn FnMut(f64, f64) -> f64,
) -> Vec<(f64, f64)> {
    if b <= a {
        return if g(a) <= 0.0 { vec![(a, a)] } else { Vec::new() };
    }
    if lip <= 0.0 {
        return if g(a) <= 0.0 { vec![(a, b)] } else { Vec::new() };
    }
    let theta = 2.0 * lip * tol;
    let mut out = Vec::new();
    let mut region: Option<Region> = None;
    let mut band_run = 0usize;
    let mut prev: Option<(f64, f64)> = None;
    let mut t = a;
    let mut gt = g(a);

    fn close(r: Region, out: &mut Vec<(f64, f64)>, refine: &mut dyn FnMut(f64, f64) -> f64) {
        if let (Some(first_neg), Some(last_neg)) = (r.first_nonpos, r.last_nonpos) {
            let lo = match r.entry_pos {
                Some(p) => refine(p, first_neg),
                None => first_neg.min(r.first),
            };
            let hi = match r.exit_pos {
                Some(p) => refine(p, last_neg),
                None => last_neg.max(r.last),
            };
            out.push((lo, hi));
        } else {
            // Grazing band: g stayed in (0, theta]; keep the whole span
            // since a shallow dip between samples cannot be excluded.
            out.push((r.first, r.last.max(r.first)));
        }
    }

    loop {
        if gt > theta {
            if let Some(mut r) = region.take() {
                if r.exit_pos.is_none() {
                    r.exit_pos = Some(t);
                }
                close(r, &mut out, refine);
                band_run = 0;
            }
        } else {
            let r = region.get_or_insert_with(|| Region {
                first: t,
                last: t,
                // The preceding outside sample brackets the entry.
                entry_pos: prev.filter(|&(_, pg)| pg > 0.0).map(|(pt, _)| pt),
                first_nonpos: None,
                last_nonpos: None,
                exit_pos: None,
            });
            r.last = t;
            if gt <= 0.0 {
                if r.first_nonpos.is_none() {
                    r.first_nonpos = Some(t);
                }
                r.last_nonpos = Some(t);
                r.exit_pos = None; // contact resumed
            } else if r.first_nonpos.is_none() {
                r.entry_pos = Some(t); // last positive before the first dip
            } else if r.exit_pos.is_none() {
                r.exit_pos = Some(t); // first positive after the last dip
            }
        }
        if t >= b {
            if let Some(r) = region.take() {
                close(r, &mut out, refine);
            }
            break;
        }

        let step = if gt > theta {
            band_run = 0;
            ((gt - theta) / lip).max(tol)
        } else if gt < -theta {
            band_run = 0;
            ((-gt - theta) / lip).max(tol)
        } else {
            // Crawl through the uncertainty band; grow exponentially if a
            // graze drags on (the whole hover is kept as contact anyway).
            band_run += 1;
            if band_run > 64 {
                tol * (1u64 << ((band_run - 64).min(40)) as u32) as f64
            } else {
                tol
            }
        };
        prev = Some((t, gt));
        t = (t + step).min(b);
        gt = g(t);
    }
    out
}

/// Moving centre of a ball area: `O(t) = M(t) O + v(t)`.
fn moving_centre(motion: &RigidMotion, origin: &Point3<f64>, t: f64) -> Point3<f64> {
    motion.eval_unchecked(t).apply(origin)
}

/// Classification of the nearest box feature to an outside point.
fn active_feature(box3: &Box3, p: &Point3<f64>) -> ([i8; 3], usize) {
    let mut signs = [0i8; 3];
    let mut outside = 0;
    for k in 0..3 {
        if p[k] > box3.max[k] {
            signs[k] = 1;
            outside += 1;
        } else if p[k] < box3.min[k] {
            signs[k] = -1;
            outside += 1;
        }
    }
    (signs, outside)
}

/// Exact clearance of the moving ball against a fixed box.
fn sphere_box_clearance<'a>(motion: &'a RigidMotion, ball: &Ball3, cell: &Box3) -> impl Fn(f64) -> f64 + 'a {
    let origin = ball.centre;
    let radius = ball.radius;
    let cell = *cell;
    move |t: f64| cell.distance(&moving_centre(motion, &origin, t)) - radius
}

/// Fast-mode clearance: the largest signed face value, i.e. the box
/// Minkowski-expanded by a cube instead of a ball. Never exceeds the
/// exact clearance, so fast intervals over-cover exact ones.
fn sphere_box_clearance_fast<'a>(
    motion: &'a RigidMotion,
    ball: &Ball3,
    cell: &Box3,
) -> impl Fn(f64) -> f64 + 'a {
    let origin = ball.centre;
    let radius = ball.radius;
    let cell = *cell;
    move |t: f64| {
        let o = moving_centre(motion, &origin, t);
        let mut worst = f64::NEG_INFINITY;
        for k in 0..3 {
            worst = worst.max(o[k] - cell.max[k]).max(cell.min[k] - o[k]);
        }
        worst - radius
    }
}

/// Refines a moving-sphere contact bracket on the active face, edge or
/// vertex equation of the 26-case system, validating the case's side
/// conditions and falling back to plain clearance bisection when the
/// bracket straddles a case change.
fn refine_sphere_contact(
    motion: &RigidMotion,
    ball: &Ball3,
    cell: &Box3,
    cfg: &ContactCfg,
    t_pos: f64,
    t_nonpos: f64,
) -> f64 {
    let solver = solver_for(cfg.tol);
    let clearance: Box<dyn Fn(f64) -> f64> = if cfg.fast {
        Box::new(sphere_box_clearance_fast(motion, ball, cell))
    } else {
        Box::new(sphere_box_clearance(motion, ball, cell))
    };
    // Locate the root roughly first so the active case can be classified
    // at the contact moment.
    let (lo, hi) = (t_pos.min(t_nonpos), t_pos.max(t_nonpos));
    let rough = bisect_root(&mut |t| clearance(t), lo, hi, &solver).unwrap_or(t_nonpos);
    let at_contact = moving_centre(motion, &ball.centre, rough);

    let face_val = |t: f64, axis: usize, sign: f64| {
        let o = moving_centre(motion, &ball.centre, t);
        cell.face(axis, sign).eval(&o)
    };

    let refined = if cfg.fast {
        // Active face = the argmax slab excess at the rough root.
        let mut best = (0usize, 1.0f64, f64::NEG_INFINITY);
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let v = face_val(rough, axis, sign);
                if v > best.2 {
                    best = (axis, sign, v);
                }
            }
        }
        let (axis, sign, _) = best;
        try_case_root(
            &mut |t| face_val(t, axis, sign) - ball.radius,
            lo,
            hi,
            &solver,
        )
        .filter(|&t| {
            // The chosen face must still dominate at the refined root.
            let v = face_val(t, axis, sign);
            (0..3).all(|k| {
                [-1.0, 1.0].iter().all(|&s| face_val(t, k, s) <= v + 1e-9 * (1.0 + ball.radius))
            })
        })
    } else {
        let (signs, outside) = active_feature(cell, &at_contact);
        let slack = 1e-9 * (1.0 + ball.radius + cell.diagonal());
        match outside {
            1 => {
                let axis = (0..3).find(|&k| signs[k] != 0).unwrap();
                let sign = signs[axis] as f64;
                try_case_root(&mut |t| face_val(t, axis, sign) - ball.radius, lo, hi, &solver)
                    .filter(|&t| {
                        (0..3).filter(|&k| k != axis).all(|k| {
                            face_val(t, k, 1.0) <= slack && face_val(t, k, -1.0) <= slack
                        })
                    })
            }
            2 => {
                let axes: Vec<usize> = (0..3).filter(|&k| signs[k] != 0).collect();
                let (k1, k2) = (axes[0], axes[1]);
                let (s1, s2) = (signs[k1] as f64, signs[k2] as f64);
                let k3 = (0..3).find(|&k| signs[k] == 0).unwrap();
                try_case_root(
                    &mut |t| {
                        let f1 = face_val(t, k1, s1);
                        let f2 = face_val(t, k2, s2);
                        f1 * f1 + f2 * f2 - ball.radius * ball.radius
                    },
                    lo,
                    hi,
                    &solver,
                )
                .filter(|&t| {
                    face_val(t, k1, s1) > -slack
                        && face_val(t, k2, s2) > -slack
                        && face_val(t, k3, 1.0) <= slack
                        && face_val(t, k3, -1.0) <= slack
                })
            }
            3 => try_case_root(
                &mut |t| {
                    let mut acc = -ball.radius * ball.radius;
                    for k in 0..3 {
                        let f = face_val(t, k, signs[k] as f64);
                        acc += f * f;
                    }
                    acc
                },
                lo,
                hi,
                &solver,
            )
            .filter(|&t| (0..3).all(|k| face_val(t, k, signs[k] as f64) > -slack)),
            _ => None, // centre inside the box at the rough root: graze
        }
    };
    refined.unwrap_or(rough)
}

fn try_case_root(
    f: &mut dyn FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    solver: &SolverConfig,
) -> Option<f64> {
    bisect_root(f, lo, hi, solver).ok()
}

/// Time intervals over the given windows during which the moved ball
/// touches the cell. Closed, padded outward by the tolerance (twice in
/// fast mode so fast intervals contain exact ones), merged when closer
/// than `2 tol`.
pub fn contact_intervals_sphere_in(
    ball: &Ball3,
    motion: &RigidMotion,
    cell: &Box3,
    cfg: &ContactCfg,
    windows: &[(f64, f64)],
) -> Vec<(f64, f64)> {
    let (a, b) = motion.domain();
    let radius = ball.centre.coords.norm();
    let mut raw = Vec::new();
    for &(w0, w1) in windows {
        let (w0, w1) = (w0.max(a), w1.min(b));
        if w1 < w0 {
            continue;
        }
        let lip = motion.speed_bound(w0, w1, radius).unwrap_or(0.0);
        let mut refine =
            |tp: f64, tn: f64| refine_sphere_contact(motion, ball, cell, cfg, tp, tn);
        let mut g: Box<dyn FnMut(f64) -> f64> = if cfg.fast {
            let f = sphere_box_clearance_fast(motion, ball, cell);
            Box::new(move |t| f(t))
        } else {
            let f = sphere_box_clearance(motion, ball, cell);
            Box::new(move |t| f(t))
        };
        raw.extend(march(&mut g, w0, w1, lip, cfg.tol, &mut refine));
    }
    let pad = if cfg.fast { 2.0 * cfg.tol } else { cfg.tol };
    let static_case = motion.is_constant();
    if static_case {
        // The march already returned exact whole-window intervals.
        return normalize_intervals(raw, 0.0, 0.0, (a, b));
    }
    normalize_intervals(raw, pad, 2.0 * cfg.tol, (a, b))
}

/// Whole-domain variant of [`contact_intervals_sphere_in`].
pub fn contact_intervals_sphere(
    ball: &Ball3,
    motion: &RigidMotion,
    cell: &Box3,
    cfg: &ContactCfg,
) -> Vec<(f64, f64)> {
    let domain = motion.domain();
    contact_intervals_sphere_in(ball, motion, cell, cfg, &[domain])
}

/// Oriented box: centre, orthonormal axes, half extents.
#[derive(Debug, Clone, Copy)]
struct Obb {
    centre: Point3<f64>,
    axes: Matrix3<f64>,
    half: Vector3<f64>,
}

/// The cell pulled back into base coordinates: `[T(t)]^{-1}(cell)`.
fn inverse_cell_obb(motion: &RigidMotion, cell: &Box3, t: f64) -> Obb {
    let iso = motion.eval_unchecked(t);
    let rt = iso.rotation.transpose();
    Obb {
        centre: Point3::from(rt * (cell.centre().coords - iso.translation)),
        axes: rt,
        half: cell.half_extents(),
    }
}

/// Largest separating-axis gap between a static box and an oriented box
/// over the 15 candidate axes. Positive iff disjoint; a lower bound on
/// the true distance when positive, so conservative-advancement skips
/// stay rigorous.
fn sat_gap(aabb: &Box3, obb: &Obb) -> f64 {
    let a_c = aabb.centre().coords;
    let a_h = aabb.half_extents();
    let b_c = obb.centre.coords;
    let b_axes = [
        Vector3::new(obb.axes[(0, 0)], obb.axes[(1, 0)], obb.axes[(2, 0)]),
        Vector3::new(obb.axes[(0, 1)], obb.axes[(1, 1)], obb.axes[(2, 1)]),
        Vector3::new(obb.axes[(0, 2)], obb.axes[(1, 2)], obb.axes[(2, 2)]),
    ];
    let mut axes: Vec<Vector3<f64>> = vec![Vector3::x(), Vector3::y(), Vector3::z()];
    axes.extend_from_slice(&b_axes);
    for ea in [Vector3::x(), Vector3::y(), Vector3::z()] {
        for eb in &b_axes {
            let c = ea.cross(eb);
            if c.norm() > 1e-9 {
                axes.push(c.normalize());
            }
        }
    }
    let mut worst = f64::NEG_INFINITY;
    for u in axes {
        let ra = a_h.x * u.x.abs() + a_h.y * u.y.abs() + a_h.z * u.z.abs();
        let rb = obb.half.x * b_axes[0].dot(&u).abs()
            + obb.half.y * b_axes[1].dot(&u).abs()
            + obb.half.z * b_axes[2].dot(&u).abs();
        let gap = (b_c - a_c).dot(&u).abs() - ra - rb;
        worst = worst.max(gap);
    }
    worst
}

/// Time intervals during which the cell pulled back by the inverse
/// motion touches the box area.
pub fn contact_intervals_box_in(
    area: &Box3,
    motion: &RigidMotion,
    cell: &Box3,
    cfg: &ContactCfg,
    windows: &[(f64, f64)],
) -> Vec<(f64, f64)> {
    let (a, b) = motion.domain();
    let r_cell = cell
        .corners()
        .iter()
        .map(|c| c.coords.norm())
        .fold(0.0f64, f64::max);
    let solver = solver_for(cfg.tol);
    let mut raw = Vec::new();
    for &(w0, w1) in windows {
        let (w0, w1) = (w0.max(a), w1.min(b));
        if w1 < w0 {
            continue;
        }
        let lip = motion.inverse_speed_bound(w0, w1, r_cell).unwrap_or(0.0);
        let mut g = |t: f64| sat_gap(area, &inverse_cell_obb(motion, cell, t));
        let mut refine = |tp: f64, tn: f64| {
            let (lo, hi) = (tp.min(tn), tp.max(tn));
            bisect_root(
                &mut |t| sat_gap(area, &inverse_cell_obb(motion, cell, t)),
                lo,
                hi,
                &solver,
            )
            .unwrap_or(tn)
        };
        raw.extend(march(&mut g, w0, w1, lip, cfg.tol, &mut refine));
    }
    if motion.is_constant() {
        return normalize_intervals(raw, 0.0, 0.0, (a, b));
    }
    normalize_intervals(raw, cfg.tol, 2.0 * cfg.tol, (a, b))
}

/// Whole-domain variant of [`contact_intervals_box_in`].
pub fn contact_intervals_box(
    area: &Box3,
    motion: &RigidMotion,
    cell: &Box3,
    cfg: &ContactCfg,
) -> Vec<(f64, f64)> {
    let domain = motion.domain();
    contact_intervals_box_in(area, motion, cell, cfg, &[domain])
}

/// Time windows during which the (inverse-moved) query point lies inside
/// the area: the gating step of point queries.
pub fn containment_intervals_point(
    p: &Point3<f64>,
    motion: &RigidMotion,
    area: &Area,
    cfg: &ContactCfg,
    windows: &[(f64, f64)],
) -> Vec<(f64, f64)> {
    match area {
        Area::Ball(ball) => {
            let degenerate = Box3 { min: *p, max: *p };
            contact_intervals_sphere_in(ball, motion, &degenerate, cfg, windows)
        }
        Area::Box(b) => {
            let degenerate = Box3 { min: *p, max: *p };
            contact_intervals_box_in(b, motion, &degenerate, cfg, windows)
        }
    }
}

/// Distance from a point to a segment.
fn point_segment_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= 0.0 {
        return (p - a).norm();
    }
    let s = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * s)).norm()
}

/// Distance from a segment to a box: the box distance is convex along
/// the segment, so a golden-section scan localizes the minimum.
fn segment_box_distance(a: &Point3<f64>, b: &Point3<f64>, box3: &Box3) -> f64 {
    let f = |s: f64| box3.distance(&Point3::from(a.coords + (b - a) * s));
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    f(0.5 * (lo + hi)).min(f(0.0)).min(f(1.0))
}

/// Time windows during which the inverse-moved world segment meets the
/// area: the gating step of ray queries (Alg-5-style `I` sets).
pub fn contact_intervals_segment(
    seg: (&Point3<f64>, &Point3<f64>),
    motion: &RigidMotion,
    area: &Area,
    cfg: &ContactCfg,
    windows: &[(f64, f64)],
) -> Vec<(f64, f64)> {
    let (a, b) = motion.domain();
    let r = seg.0.coords.norm().max(seg.1.coords.norm());
    let solver = solver_for(cfg.tol);
    let mut raw = Vec::new();
    for &(w0, w1) in windows {
        let (w0, w1) = (w0.max(a), w1.min(b));
        if w1 < w0 {
            continue;
        }
        let lip = motion.inverse_speed_bound(w0, w1, r).unwrap_or(0.0);
        let clearance = |t: f64| {
            let iso = motion.eval_unchecked(t);
            let p0 = iso.inverse_apply(seg.0);
            let p1 = iso.inverse_apply(seg.1);
            match area {
                Area::Ball(ball) => point_segment_distance(&ball.centre, &p0, &p1) - ball.radius,
                Area::Box(bx) => segment_box_distance(&p0, &p1, bx),
            }
        };
        let mut g = |t: f64| clearance(t);
        let mut refine = |tp: f64, tn: f64| {
            let (lo, hi) = (tp.min(tn), tp.max(tn));
            bisect_root(&mut |t| clearance(t), lo, hi, &solver).unwrap_or(tn)
        };
        raw.extend(march(&mut g, w0, w1, lip, cfg.tol, &mut refine));
    }
    if motion.is_constant() {
        return normalize_intervals(raw, 0.0, 0.0, (a, b));
    }
    normalize_intervals(raw, cfg.tol, 2.0 * cfg.tol, (a, b))
}
