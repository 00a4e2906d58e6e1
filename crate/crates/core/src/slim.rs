//! Ball-cover implicitization: greedy randomized covers at geometrically
//! shrinking radii, one bivariate patch per ball, acceptance driven by a
//! residual ranking plus a description-length penalty, and blended
//! partition-of-unity evaluation with a nearest-neighbour fallback for
//! uncovered queries.

use crate::error::{Error, Result};
use crate::geometry::{
    Area, Ball3, BivariatePatch, Frame, LocalImplicitRep, LocalProcedure, OrientedPointCloud,
    RepKind, RepPatch,
};
use crate::solvers::{min_eigenvalue_sym3, wls_fit, WlsRow};
use crate::spatial::KdTree;
use nalgebra::{Matrix3, Point3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlimParams {
    /// Initial cover radius as a fraction of the bounding-box diagonal.
    pub rho0_fraction: f64,
    /// Radius shrink factor per level (golden ratio conjugate).
    pub g: f64,
    /// Description-length scale in the acceptance ranking.
    pub t_mdl: f64,
    /// Keep non-accepted fits as coarser multi-scale levels.
    pub levels_kept: bool,
    pub rng_seed: u64,
}

impl Default for SlimParams {
    fn default() -> Self {
        Self {
            rho0_fraction: 0.1,
            g: 0.5 * (5.0f64.sqrt() - 1.0),
            t_mdl: 0.02,
            levels_kept: false,
            rng_seed: 0,
        }
    }
}

impl SlimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0 && self.g < 1.0) {
            return Err(Error::invalid("g must lie in (0, 1)"));
        }
        if !(self.rho0_fraction > 0.0) {
            return Err(Error::invalid("rho0_fraction must be positive"));
        }
        if !(self.t_mdl > 0.0) {
            return Err(Error::invalid("t_mdl must be positive"));
        }
        Ok(())
    }
}

/// Compactly supported bump weight: `exp(-1 / (1 - (r/R)^2))` inside
/// (-R, R), zero outside. `G_R(0) = 1/e` and `G_R(R) = 0`, so containment
/// for blending is effectively the open ball.
pub fn bump_weight(r: f64, radius: f64) -> f64 {
    let x = r / radius;
    if x.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - x * x)).exp()
    }
}

/// Greedy randomized ball cover: repeatedly pick a uniformly random
/// not-yet-covered point as the next centre until everything is covered.
/// Centres are cloud members; deterministic for a given seed.
pub fn cover_with_balls(points: &[Point3<f64>], radius: f64, seed: u64) -> Vec<Ball3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cover_with_rng(points, radius, &mut rng)
}

fn cover_with_rng(points: &[Point3<f64>], radius: f64, rng: &mut ChaCha8Rng) -> Vec<Ball3> {
    assert!(!points.is_empty() && radius > 0.0);
    let kd = KdTree::build(points);
    let mut alive: Vec<usize> = (0..points.len()).collect();
    let mut covered = vec![false; points.len()];
    let mut balls = Vec::new();
    while !alive.is_empty() {
        let pick = rng.gen_range(0..alive.len());
        let centre_idx = alive[pick];
        let centre = points[centre_idx];
        balls.push(Ball3 { centre, radius });
        for i in kd.within_radius(&centre, radius) {
            covered[i] = true;
        }
        alive.retain(|&i| !covered[i]);
    }
    balls
}

/// Regularizing constant: the mean over the cloud of the smallest
/// eigenvalue of the covariance of each point together with its ten
/// nearest neighbours.
pub fn compute_lambda(cloud: &OrientedPointCloud) -> Result<f64> {
    if cloud.len() < 11 {
        return Err(Error::invalid(format!(
            "lambda needs at least 11 points, got {}",
            cloud.len()
        )));
    }
    let positions: Vec<Point3<f64>> = cloud.points().iter().map(|p| p.position).collect();
    let kd = KdTree::build(&positions);
    let sum: f64 = positions
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut group: Vec<Point3<f64>> =
                kd.knn(p, 10, Some(i)).into_iter().map(|(j, _)| positions[j]).collect();
            group.push(*p);
            let centroid: Vector3<f64> =
                group.iter().map(|q| q.coords).sum::<Vector3<f64>>() / group.len() as f64;
            let mut cov = Matrix3::zeros();
            for q in &group {
                let d = q.coords - centroid;
                cov += d * d.transpose();
            }
            cov /= (group.len() - 1) as f64;
            min_eigenvalue_sym3(&cov).expect("covariance is symmetric")
        })
        .sum();
    Ok(sum / cloud.len() as f64)
}

/// Patch fitted to the points of the cloud inside the ball, in the local
/// frame whose normal is the mean of their normals, minimizing the
/// bump-weighted squared field.
pub fn slim_fit(ball: &Ball3, cloud: &OrientedPointCloud, inside: &[usize]) -> Result<BivariatePatch> {
    if inside.len() < 6 {
        return Err(Error::Underdetermined { points: inside.len(), unknowns: 6 });
    }
    let mean: Vector3<f64> = inside.iter().map(|&i| cloud.normal(i)).sum();
    if mean.norm() < 1e-12 {
        return Err(Error::DegenerateFrame { norm: mean.norm() });
    }
    let frame = Frame::from_normal(ball.centre, mean)?;
    let rows: Vec<WlsRow> = inside
        .iter()
        .map(|&i| {
            let p = cloud.position(i);
            let (u, v, w) = frame.local(&p);
            WlsRow {
                basis: vec![u * u, u * v, v * v, u, v, 1.0],
                weight: bump_weight((p - ball.centre).norm(), ball.radius),
                target: w,
            }
        })
        .collect();
    let fit = wls_fit(&rows)?;
    let c: [f64; 6] = std::array::from_fn(|i| fit.coefficients[i]);
    Ok(BivariatePatch::from_coeffs(frame, c))
}

/// The two rankings of a radius: the plain squared residual over the
/// cloud inside `B(centre, rho)`, and that residual plus the
/// description-length penalty `lambda (t_mdl / rho)^2`.
pub fn rankings(
    centre: &Point3<f64>,
    patch: &BivariatePatch,
    cloud: &OrientedPointCloud,
    kd: &KdTree,
    rho: f64,
    lambda: f64,
    t_mdl: f64,
) -> (f64, f64) {
    let eps: f64 = kd
        .within_radius(centre, rho)
        .into_iter()
        .map(|i| patch.eval(&cloud.position(i)).powi(2))
        .sum();
    let penalty = lambda * (t_mdl / rho) * (t_mdl / rho);
    (eps, eps + penalty)
}

/// One accepted ball with the rankings that justified it.
#[derive(Debug, Clone)]
pub struct AcceptanceRecord {
    pub level: usize,
    pub rho: f64,
    pub patch_index: usize,
    /// Residual ranking at rho_{k-1}, rho_k, rho_{k+1}.
    pub eps: [f64; 3],
    /// Penalized ranking at the same radii.
    pub e: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct SlimBuild {
    pub rep: LocalImplicitRep,
    pub lambda: f64,
    pub rho0: f64,
    pub acceptances: Vec<AcceptanceRecord>,
    /// Points force-accepted when the radius floor was reached.
    pub forced_points: usize,
    pub levels_built: usize,
}

/// Runs the shrinking-radius cover loop: per level, cover the uncovered
/// points, fit each ball, and accept a ball exactly when its penalized
/// ranking is a strict local minimum in the radius while the residual
/// ranking still strictly decreases. Accepted balls remove their points
/// from the uncovered set. Stops when everything is covered, or at the
/// radius floor `1e-6 rho0`, force-accepting what remains.
pub fn slim_build(cloud: &OrientedPointCloud, params: &SlimParams) -> Result<SlimBuild> {
    params.validate()?;
    let positions: Vec<Point3<f64>> = cloud.points().iter().map(|p| p.position).collect();
    let kd = KdTree::build(&positions);
    let bb = cloud.bounding_box();
    let rho0 = params.rho0_fraction * bb.diagonal().max(f64::MIN_POSITIVE);
    let lambda = if cloud.len() >= 11 { compute_lambda(cloud)? } else { 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);

    let mut uncovered: Vec<bool> = vec![true; cloud.len()];
    let mut remaining = cloud.len();
    let mut patches: Vec<RepPatch> = Vec::new();
    let mut acceptances = Vec::new();
    let mut levels: Vec<Vec<(Ball3, LocalProcedure)>> = Vec::new();
    let mut forced_points = 0;

    let mut level = 1usize;
    while remaining > 0 {
        let rho = rho0 * params.g.powi(level as i32);
        let floor = rho < 1e-6 * rho0;
        let alive: Vec<Point3<f64>> =
            (0..cloud.len()).filter(|&i| uncovered[i]).map(|i| positions[i]).collect();
        let balls = cover_with_rng(&alive, rho, &mut rng);

        struct BallFit {
            ball: Ball3,
            patch: BivariatePatch,
            eps: [f64; 3],
            e: [f64; 3],
            accept: bool,
        }
        let rho_prev = rho / params.g;
        let rho_next = rho * params.g;
        let fits: Vec<Option<BallFit>> = balls
            .par_iter()
            .map(|ball| {
                let inside = kd.within_radius(&ball.centre, ball.radius);
                let patch = slim_fit(ball, cloud, &inside).ok()?;
                let (e_prev, big_prev) =
                    rankings(&ball.centre, &patch, cloud, &kd, rho_prev, lambda, params.t_mdl);
                let (e_cur, big_cur) =
                    rankings(&ball.centre, &patch, cloud, &kd, rho, lambda, params.t_mdl);
                let (e_next, big_next) =
                    rankings(&ball.centre, &patch, cloud, &kd, rho_next, lambda, params.t_mdl);
                let accept = big_next > big_cur
                    && big_cur < big_prev
                    && e_next < e_cur
                    && e_cur < e_prev;
                Some(BallFit {
                    ball: *ball,
                    patch,
                    eps: [e_prev, e_cur, e_next],
                    e: [big_prev, big_cur, big_next],
                    accept,
                })
            })
            .collect();

        let mut level_store = Vec::new();
        for (ball, fit) in balls.iter().zip(fits) {
            match fit {
                Some(f) if f.accept || floor => {
                    if floor && !f.accept {
                        forced_points += kd
                            .within_radius(&f.ball.centre, f.ball.radius)
                            .into_iter()
                            .filter(|&i| uncovered[i])
                            .count();
                    } else {
                        acceptances.push(AcceptanceRecord {
                            level,
                            rho,
                            patch_index: patches.len(),
                            eps: f.eps,
                            e: f.e,
                        });
                    }
                    for i in kd.within_radius(&f.ball.centre, f.ball.radius) {
                        if uncovered[i] {
                            uncovered[i] = false;
                            remaining -= 1;
                        }
                    }
                    patches.push(RepPatch {
                        area: Area::Ball(f.ball),
                        procedure: LocalProcedure::Patch(f.patch),
                        flagged: floor && !f.accept,
                    });
                }
                Some(f) => {
                    if params.levels_kept {
                        level_store.push((f.ball, LocalProcedure::Patch(f.patch)));
                    }
                }
                None if floor => {
                    // Too few points for a patch: the centre is a cloud
                    // point, use its tangent plane.
                    let centre_idx = positions
                        .iter()
                        .position(|p| *p == ball.centre)
                        .expect("cover centres are cloud points");
                    let frame = Frame::from_normal(ball.centre, cloud.normal(centre_idx))?;
                    for i in kd.within_radius(&ball.centre, ball.radius) {
                        if uncovered[i] {
                            uncovered[i] = false;
                            remaining -= 1;
                            forced_points += 1;
                        }
                    }
                    patches.push(RepPatch {
                        area: Area::Ball(*ball),
                        procedure: LocalProcedure::Patch(BivariatePatch::from_coeffs(
                            frame,
                            [0.0; 6],
                        )),
                        flagged: true,
                    });
                }
                None => {}
            }
        }
        if params.levels_kept {
            levels.push(level_store);
        }
        level += 1;
        if floor && remaining > 0 {
            // Every remaining point got a ball this round (covers cover),
            // so this is unreachable unless the cover missed; bail out.
            return Err(Error::invalid("radius floor reached with uncovered points"));
        }
    }

    let bound = patches
        .iter()
        .map(|p| p.area.bounding_box())
        .fold(bb, |a, b| a.union(&b));
    let rep = LocalImplicitRep {
        kind: RepKind::BallCover,
        patches,
        bound,
        fallback_cloud: Some(cloud.clone()),
        levels: if params.levels_kept { Some(levels) } else { None },
    };
    Ok(SlimBuild {
        rep,
        lambda,
        rho0,
        acceptances,
        forced_points,
        levels_built: level - 1,
    })
}

/// Blended evaluation: the bump-weighted mean of the patch values over
/// the accepted balls strictly containing `q`. Uncovered queries fall
/// back to the signed nearest-neighbour distance against the generating
/// cloud: `sign(<q - p, n>) |q - p|`.
pub fn blended_eval(rep: &LocalImplicitRep, q: &Point3<f64>) -> (f64, bool) {
    debug_assert_eq!(rep.kind, RepKind::BallCover);
    let mut num = 0.0;
    let mut den = 0.0;
    for patch in &rep.patches {
        if let Area::Ball(ball) = &patch.area {
            let w = bump_weight((q - ball.centre).norm(), ball.radius);
            if w > 0.0 {
                num += w * patch.procedure.eval(q);
                den += w;
            }
        }
    }
    if den > 0.0 {
        return (num / den, true);
    }
    let cloud = rep
        .fallback_cloud
        .as_ref()
        .expect("ball cover carries a fallback cloud");
    let (best, _) = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| (i, (q - p.position).norm()))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    let p = cloud.position(best);
    let n = cloud.normal(best);
    let dist = (q - p).norm();
    let value = if (q - p).dot(&n) < 0.0 { -dist } else { dist };
    (value, false)
}

/// A blended surface point for a ray: intersects the local patches of the
/// balls that share the ray segment inside the first ball hit, and blends
/// the per-ball intersection points with the bump weights.
pub fn slim_ray_intersect(
    rep: &LocalImplicitRep,
    origin: &Point3<f64>,
    direction: &Vector3<f64>,
) -> Option<Point3<f64>> {
    debug_assert!((direction.norm() - 1.0).abs() < 1e-9);
    // Entry parameter of each ball hit by the forward ray.
    let mut first: Option<(f64, f64, usize)> = None;
    for (i, patch) in rep.patches.iter().enumerate() {
        if let Area::Ball(ball) = &patch.area {
            if let Some((s0, s1)) = ray_ball_span(origin, direction, ball) {
                if first.map_or(true, |(f0, _, _)| s0 < f0) {
                    first = Some((s0, s1, i));
                }
            }
        }
    }
    let (f0, f1, _) = first?;
    let mut num = Vector3::zeros();
    let mut den = 0.0;
    for patch in &rep.patches {
        let ball = match &patch.area {
            Area::Ball(b) => b,
            Area::Box(_) => continue,
        };
        let (s0, s1) = match ray_ball_span(origin, direction, ball) {
            Some(span) => span,
            None => continue,
        };
        // The ball must share part of the ray segment inside the first ball.
        if s1 < f0 || s0 > f1 {
            continue;
        }
        let patch_fn = match &patch.procedure {
            LocalProcedure::Patch(p) => p,
            _ => continue,
        };
        if let Some(hit) = ray_patch_hit(origin, direction, patch_fn, ball) {
            let w = bump_weight((hit - ball.centre).norm(), ball.radius);
            num += hit.coords * w;
            den += w;
        }
    }
    if den > 0.0 {
        Some(Point3::from(num / den))
    } else {
        None
    }
}

/// Span of forward ray parameters inside a ball, or None when missed.
fn ray_ball_span(origin: &Point3<f64>, direction: &Vector3<f64>, ball: &Ball3) -> Option<(f64, f64)> {
    let oc = origin - ball.centre;
    let b = oc.dot(direction);
    let c = oc.norm_squared() - ball.radius * ball.radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let (s0, s1) = (-b - sq, -b + sq);
    if s1 < 0.0 {
        return None;
    }
    Some((s0.max(0.0), s1))
}

/// Nearest forward intersection of the ray with the patch's zero set that
/// lies inside the ball: the field along the ray is a quadratic in the
/// parameter.
fn ray_patch_hit(
    origin: &Point3<f64>,
    direction: &Vector3<f64>,
    patch: &BivariatePatch,
    ball: &Ball3,
) -> Option<Point3<f64>> {
    // f(origin + s d) = w(s) - poly(u(s), v(s)) with all three local
    // coordinates affine in s, so f = a s^2 + b s + c.
    let f0 = patch.eval(origin);
    let f1 = patch.eval(&(origin + direction));
    let f2 = patch.eval(&(origin + direction * 2.0));
    let a = 0.5 * (f2 - 2.0 * f1 + f0);
    let b = f1 - f0 - a;
    let c = f0;
    let mut roots: Vec<f64> = Vec::new();
    if a.abs() < 1e-14 {
        if b.abs() > 1e-14 {
            roots.push(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            roots.push((-b - sq) / (2.0 * a));
            roots.push((-b + sq) / (2.0 * a));
        }
    }
    roots
        .into_iter()
        .filter(|&s| s >= 0.0)
        .map(|s| (s, origin + direction * s))
        .filter(|(_, p)| ball.contains(p))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .map(|(_, p)| p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3;
    use crate::synth;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cover_examples() {
        let one = vec![Point3::new(1.0, 2.0, 3.0)];
        let balls = cover_with_balls(&one, 0.5, 1);
        assert_eq!(balls.len(), 1);
        assert_eq!(balls[0].centre, one[0]);

        let two = vec![Point3::origin(), Point3::new(3.0, 0.0, 0.0)];
        let balls = cover_with_balls(&two, 1.0, 2);
        assert_eq!(balls.len(), 2);

        // 1000 points on a circle, radius = the 10-degree chord: every
        // point must be within the radius of some centre.
        let circle = synth::circle_cloud(1000, 1.0);
        let pts: Vec<Point3<f64>> = circle.points().iter().map(|p| p.position).collect();
        let chord = 2.0 * (5.0f64).to_radians().sin();
        let balls = cover_with_balls(&pts, chord, 3);
        for p in &pts {
            assert!(balls.iter().any(|b| b.contains(p)), "uncovered point");
        }
        for b in &balls {
            assert!(pts.iter().any(|p| (p - b.centre).norm() < 1e-12), "centre not a member");
        }
        // Determinism.
        assert_eq!(balls, cover_with_balls(&pts, chord, 3));
    }

    #[test]
    fn lambda_flat_and_linear_clouds() {
        let plane = synth::plane_cloud(300, 1.0, 0.0, 0.0, 5);
        assert!(compute_lambda(&plane).unwrap().abs() < 1e-12);

        let line: Vec<crate::geometry::OrientedPoint> = (0..50)
            .map(|i| crate::geometry::OrientedPoint {
                position: Point3::new(i as f64 * 0.1, 0.0, 0.0),
                normal: Vector3::z(),
            })
            .collect();
        let line = OrientedPointCloud::new(line).unwrap();
        assert!(compute_lambda(&line).unwrap().abs() < 1e-12);

        let few = synth::plane_cloud(10, 1.0, 0.0, 0.0, 6);
        assert!(compute_lambda(&few).is_err());
    }

    #[test]
    fn lambda_estimates_noise_variance() {
        // The noise deviation must sit well below the 10-NN neighbourhood
        // radius (~0.037 here) or the minimum eigenvalue mixes with the
        // in-plane directions and biases low.
        let sigma = 0.002;
        let noisy = synth::plane_cloud(10_000, 1.0, 0.0, sigma, 7);
        let lambda = compute_lambda(&noisy).unwrap();
        let expected = sigma * sigma;
        assert!(
            (lambda - expected).abs() < 0.3 * expected,
            "lambda {lambda:.3e} vs sigma^2 {expected:.3e}"
        );
    }

    #[test]
    fn bump_endpoints() {
        assert_eq!(bump_weight(1.0, 1.0), 0.0);
        assert!((bump_weight(0.0, 1.0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn slim_fit_plane_is_exact() {
        let cloud = synth::plane_cloud(200, 1.0, 0.0, 0.0, 8);
        let ball = Ball3 { centre: cloud.position(0), radius: 3.0 };
        let inside: Vec<usize> = (0..cloud.len()).collect();
        let patch = slim_fit(&ball, &cloud, &inside).unwrap();
        let objective: f64 = inside
            .iter()
            .map(|&i| {
                let p = cloud.position(i);
                bump_weight((p - ball.centre).norm(), ball.radius) * patch.eval(&p).powi(2)
            })
            .sum();
        assert!(objective < 1e-12, "objective {objective}");
    }

    #[test]
    fn slim_fit_recovers_paraboloid() {
        // Surface w = u^2 + 0.5 v^2 around the origin.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pts = vec![crate::geometry::OrientedPoint {
            position: Point3::origin(),
            normal: Vector3::z(),
        }];
        for _ in 0..200 {
            let u: f64 = rng.gen_range(-0.5..0.5);
            let v: f64 = rng.gen_range(-0.5..0.5);
            pts.push(crate::geometry::OrientedPoint {
                position: Point3::new(u, v, u * u + 0.5 * v * v),
                normal: Vector3::z(),
            });
        }
        let cloud = OrientedPointCloud::new(pts).unwrap();
        let ball = Ball3 { centre: Point3::origin(), radius: 2.0 };
        let inside: Vec<usize> = (0..cloud.len()).collect();
        let patch = slim_fit(&ball, &cloud, &inside).unwrap();
        assert!((patch.c20 - 1.0).abs() < 1e-6, "c20 {}", patch.c20);
        assert!((patch.c02 - 0.5).abs() < 1e-6, "c02 {}", patch.c02);
    }

    #[test]
    fn slim_fit_error_paths() {
        let cloud = synth::plane_cloud(20, 1.0, 0.0, 0.0, 10);
        let ball = Ball3 { centre: Point3::origin(), radius: 1.0 };
        assert!(matches!(
            slim_fit(&ball, &cloud, &[0, 1, 2]),
            Err(Error::Underdetermined { .. })
        ));

        // Opposed normals cancel the frame.
        let pts: Vec<crate::geometry::OrientedPoint> = (0..10)
            .map(|i| crate::geometry::OrientedPoint {
                position: Point3::new(i as f64 * 0.1, (i % 3) as f64 * 0.1, 0.0),
                normal: if i % 2 == 0 { Vector3::z() } else { -Vector3::z() },
            })
            .collect();
        let cloud = OrientedPointCloud::new(pts).unwrap();
        let inside: Vec<usize> = (0..cloud.len()).collect();
        assert!(matches!(
            slim_fit(&ball, &cloud, &inside),
            Err(Error::DegenerateFrame { .. })
        ));
    }

    #[test]
    fn rankings_examples() {
        let cloud = synth::plane_cloud(100, 1.0, 0.0, 0.0, 11);
        let positions: Vec<Point3<f64>> = cloud.points().iter().map(|p| p.position).collect();
        let kd = KdTree::build(&positions);
        let ball = Ball3 { centre: Point3::origin(), radius: 1.0 };
        let inside: Vec<usize> = kd.within_radius(&ball.centre, ball.radius);
        let patch = slim_fit(&ball, &cloud, &inside).unwrap();
        let lambda = 0.37;
        let t_mdl = 0.02;

        // Interpolating patch: eps = 0, E = the pure penalty.
        let (eps, e) = rankings(&ball.centre, &patch, &cloud, &kd, 0.5, lambda, t_mdl);
        assert!(eps < 1e-12);
        assert!((e - lambda * (t_mdl / 0.5) * (t_mdl / 0.5)).abs() < 1e-12);

        // Large rho: the penalty vanishes and E tends to eps.
        let (eps, e) = rankings(&ball.centre, &patch, &cloud, &kd, 1e9, lambda, t_mdl);
        assert!((e - eps).abs() < 1e-18);

        // Against a direct summation oracle on a non-trivial patch.
        let frame = Frame::from_normal(Point3::origin(), Vector3::new(0.3, -0.2, 1.0)).unwrap();
        let patch = BivariatePatch::from_coeffs(frame, [0.4, -0.1, 0.2, 0.05, -0.3, 0.02]);
        let rho = 0.8;
        let (eps, e) = rankings(&Point3::origin(), &patch, &cloud, &kd, rho, lambda, t_mdl);
        let oracle: f64 = cloud
            .points()
            .iter()
            .filter(|p| (p.position - Point3::origin()).norm() <= rho)
            .map(|p| patch.eval(&p.position).powi(2))
            .sum();
        assert!((eps - oracle).abs() <= 1e-12 * (1.0 + oracle));
        assert!((e - (oracle + lambda * (t_mdl / rho).powi(2))).abs() <= 1e-12 * (1.0 + e));
    }

    #[test]
    fn build_sphere_covers_and_blends() {
        let cloud = synth::sphere_cloud(5000, Point3::origin(), 1.0);
        let build = slim_build(&cloud, &SlimParams::default()).unwrap();
        assert_eq!(build.forced_points, 0);
        assert!(build.rep.uncovered_points(&cloud).is_empty());
        assert!(!build.acceptances.is_empty());

        // Acceptance rankings hold strictly, re-verified from the stored
        // patches.
        let positions: Vec<Point3<f64>> = cloud.points().iter().map(|p| p.position).collect();
        let kd = KdTree::build(&positions);
        for rec in &build.acceptances {
            let patch = match &build.rep.patches[rec.patch_index] {
                RepPatch { procedure: LocalProcedure::Patch(p), area: Area::Ball(b), .. } => (p, b),
                other => panic!("unexpected patch {other:?}"),
            };
            let params = SlimParams::default();
            for (slot, rho) in
                [(0, rec.rho / params.g), (1, rec.rho), (2, rec.rho * params.g)]
            {
                let (eps, e) = rankings(
                    &patch.1.centre,
                    patch.0,
                    &cloud,
                    &kd,
                    rho,
                    build.lambda,
                    params.t_mdl,
                );
                assert!((eps - rec.eps[slot]).abs() <= 1e-9 * (1.0 + eps));
                assert!((e - rec.e[slot]).abs() <= 1e-9 * (1.0 + e));
            }
            assert!(rec.e[2] > rec.e[1] && rec.e[1] < rec.e[0]);
            assert!(rec.eps[2] < rec.eps[1] && rec.eps[1] < rec.eps[0]);
        }

        // Blended field small on the generating cloud.
        let tol = 0.01 * build.rho0;
        let good = cloud
            .points()
            .iter()
            .filter(|p| {
                let (value, covered) = blended_eval(&build.rep, &p.position);
                covered && value.abs() < tol
            })
            .count();
        assert!(
            good as f64 >= 0.95 * cloud.len() as f64,
            "only {good}/{} within tolerance",
            cloud.len()
        );
    }

    #[test]
    fn build_single_point_forces_acceptance() {
        let pts = vec![crate::geometry::OrientedPoint {
            position: Point3::new(0.3, -0.1, 0.6),
            normal: Vector3::z(),
        }];
        let cloud = OrientedPointCloud::new(pts).unwrap();
        let build = slim_build(&cloud, &SlimParams::default()).unwrap();
        assert_eq!(build.rep.patches.len(), 1);
        assert!(build.rep.patches[0].flagged);
        assert_eq!(build.forced_points, 1);
        assert!(build.rep.uncovered_points(&cloud).is_empty());
    }

    #[test]
    fn build_is_deterministic_and_radii_exact() {
        let cloud = synth::sphere_cloud(800, Point3::origin(), 1.0);
        let params = SlimParams { levels_kept: true, ..Default::default() };
        let a = slim_build(&cloud, &params).unwrap();
        let b = slim_build(&cloud, &params).unwrap();
        assert_eq!(a.rep, b.rep);

        // rho_k = g^k rho0 exactly, as stored in the acceptance records.
        for rec in &a.acceptances {
            assert_eq!(rec.rho, a.rho0 * params.g.powi(rec.level as i32));
        }
    }

    #[test]
    fn multiscale_levels_refine() {
        let cloud = synth::sphere_cloud(3000, Point3::origin(), 1.0);
        let params = SlimParams { levels_kept: true, ..Default::default() };
        let build = slim_build(&cloud, &params).unwrap();
        let levels = build.rep.levels.as_ref().unwrap();
        // Median |value| of each level's own fits over the cloud points
        // they cover must not increase with depth.
        let mut medians = Vec::new();
        for level in levels.iter().take(build.levels_built) {
            if level.is_empty() {
                continue;
            }
            let mut values = Vec::new();
            for p in cloud.points() {
                let mut num = 0.0;
                let mut den = 0.0;
                for (ball, proc) in level {
                    let w = bump_weight((p.position - ball.centre).norm(), ball.radius);
                    if w > 0.0 {
                        num += w * proc.eval(&p.position);
                        den += w;
                    }
                }
                if den > 0.0 {
                    values.push((num / den).abs());
                }
            }
            if values.len() < cloud.len() / 2 {
                continue;
            }
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(values[values.len() / 2]);
        }
        for w in medians.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "median grew: {:?}", medians);
        }
    }

    #[test]
    fn blended_eval_examples() {
        let cloud = synth::sphere_cloud(2000, Point3::origin(), 1.0);
        let build = slim_build(&cloud, &SlimParams::default()).unwrap();

        // A query in exactly one ball reproduces that patch's value.
        let mut lonely = None;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5000 {
            let q = Point3::new(
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
            );
            let containing: Vec<usize> = build
                .rep
                .patches
                .iter()
                .enumerate()
                .filter(|(_, p)| match &p.area {
                    Area::Ball(b) => bump_weight((q - b.centre).norm(), b.radius) > 0.0,
                    _ => false,
                })
                .map(|(i, _)| i)
                .collect();
            if containing.len() == 1 {
                lonely = Some((q, containing[0]));
                break;
            }
        }
        if let Some((q, idx)) = lonely {
            let (value, covered) = blended_eval(&build.rep, &q);
            assert!(covered);
            let direct = build.rep.patches[idx].procedure.eval(&q);
            assert!((value - direct).abs() < 1e-12);
        }

        // Uncovered fallback: 1m beyond a point along its outward normal.
        let p = cloud.position(0);
        let n = cloud.normal(0);
        let far = Point3::from(p.coords + n * 3.0);
        let (value, covered) = blended_eval(&build.rep, &far);
        if !covered {
            assert!(value > 0.0);
        }
        let probe = Point3::from(p.coords * 4.0);
        let (value, covered) = blended_eval(&build.rep, &probe);
        assert!(!covered, "probe unexpectedly covered");
        assert!((value - (probe - p_nearest(&cloud, &probe)).norm()).abs() < 1e-9);

        // Multi-ball blend equals the direct weighted-sum oracle.
        let mut checked = 0;
        for _ in 0..5000 {
            let i = rng.gen_range(0..cloud.len());
            let q = cloud.position(i);
            let mut num = 0.0;
            let mut den = 0.0;
            let mut count = 0;
            for patch in &build.rep.patches {
                if let Area::Ball(b) = &patch.area {
                    let w = bump_weight((q - b.centre).norm(), b.radius);
                    if w > 0.0 {
                        num += w * patch.procedure.eval(&q);
                        den += w;
                        count += 1;
                    }
                }
            }
            if count >= 3 {
                let (value, covered) = blended_eval(&build.rep, &q);
                assert!(covered);
                assert!((value - num / den).abs() < 1e-12);
                checked += 1;
                if checked > 20 {
                    break;
                }
            }
        }
        assert!(checked > 0, "no 3-ball overlap found");
    }

    fn p_nearest(cloud: &OrientedPointCloud, q: &Point3<f64>) -> Point3<f64> {
        cloud
            .points()
            .iter()
            .map(|p| p.position)
            .min_by(|a, b| (q - a).norm().partial_cmp(&(q - b).norm()).unwrap())
            .unwrap()
    }

    #[test]
    fn ray_intersect_examples() {
        // Single ball, plane patch orthogonal to the ray: exact plane hit.
        let frame = Frame::from_normal(Point3::origin(), Vector3::z()).unwrap();
        let patch = BivariatePatch::from_coeffs(frame, [0.0; 6]);
        let rep = LocalImplicitRep {
            kind: RepKind::BallCover,
            patches: vec![RepPatch {
                area: Area::Ball(Ball3 { centre: Point3::origin(), radius: 1.0 }),
                procedure: LocalProcedure::Patch(patch),
                flagged: false,
            }],
            bound: Ball3 { centre: Point3::origin(), radius: 1.0 }.bounding_box(),
            fallback_cloud: Some(synth::plane_cloud(10, 0.5, 0.0, 0.0, 1)),
            levels: None,
        };
        let hit = slim_ray_intersect(&rep, &Point3::new(0.1, 0.05, 5.0), &(-Vector3::z())).unwrap();
        assert!((hit - Point3::new(0.1, 0.05, 0.0)).norm() < 1e-12);

        // Ray missing all balls.
        assert!(slim_ray_intersect(&rep, &Point3::new(5.0, 5.0, 5.0), &Vector3::x()).is_none());

        // Two overlapping balls with coplanar patches blend onto the plane.
        let mk = |centre: Point3<f64>| RepPatch {
            area: Area::Ball(Ball3 { centre, radius: 1.0 }),
            procedure: LocalProcedure::Patch(BivariatePatch::from_coeffs(
                Frame::from_normal(centre, Vector3::z()).unwrap(),
                [0.0, 0.0, 0.0, 0.0, 0.0, -centre.z],
            )),
            flagged: false,
        };
        // Both patches represent the plane z = 0 (centres sit on it).
        let rep2 = LocalImplicitRep {
            kind: RepKind::BallCover,
            patches: vec![mk(Point3::new(-0.3, 0.0, 0.0)), mk(Point3::new(0.3, 0.0, 0.0))],
            bound: Box3 {
                min: Point3::new(-1.3, -1.0, -1.0),
                max: Point3::new(1.3, 1.0, 1.0),
            },
            fallback_cloud: Some(synth::plane_cloud(10, 0.5, 0.0, 0.0, 2)),
            levels: None,
        };
        let hit = slim_ray_intersect(&rep2, &Point3::new(0.0, 0.1, 4.0), &(-Vector3::z())).unwrap();
        assert!(hit.z.abs() < 1e-9, "blended hit off the plane: {hit:?}");
    }
}
