//! Synthetic oriented point clouds for tests, benchmarks and demos:
//! spheres, capped cylinders, planes and the sharp-feature configurations
//! (concave dihedrals and corners) the fitters classify.
//!
//! Sharp-feature clouds are union-type: each face lies on the nonnegative
//! side of every other face's plane, so a min-of-patches procedure can
//! represent the solid with vanishing residual.

use crate::geometry::{OrientedPoint, OrientedPointCloud};
use nalgebra::{Point3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Deterministic quasi-uniform sphere sampling (Fibonacci lattice) with
/// exact outward normals.
pub fn sphere_cloud(n: usize, centre: Point3<f64>, radius: f64) -> OrientedPointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let points = (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let theta = golden * i as f64;
            let normal = Vector3::new(r * theta.cos(), y, r * theta.sin());
            OrientedPoint { position: centre + normal * radius, normal }
        })
        .collect();
    OrientedPointCloud::new(points).unwrap()
}

/// Closed cylinder of the given radius along x in `[-half_len, half_len]`,
/// lateral surface plus both cap disks, exact normals.
pub fn capped_cylinder_cloud(n: usize, radius: f64, half_len: f64, seed: u64) -> OrientedPointCloud {
    let mut rng = rng(seed);
    let lateral_area = 2.0 * std::f64::consts::PI * radius * 2.0 * half_len;
    let cap_area = std::f64::consts::PI * radius * radius;
    let total = lateral_area + 2.0 * cap_area;
    let points = (0..n)
        .map(|_| {
            let pick: f64 = rng.gen_range(0.0..total);
            if pick < lateral_area {
                let x = rng.gen_range(-half_len..half_len);
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                let normal = Vector3::new(0.0, phi.cos(), phi.sin());
                OrientedPoint {
                    position: Point3::new(x, radius * phi.cos(), radius * phi.sin()),
                    normal,
                }
            } else {
                let sign = if pick < lateral_area + cap_area { 1.0 } else { -1.0 };
                let r = radius * rng.gen_range(0.0f64..1.0).sqrt();
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                OrientedPoint {
                    position: Point3::new(sign * half_len, r * phi.cos(), r * phi.sin()),
                    normal: Vector3::new(sign, 0.0, 0.0),
                }
            }
        })
        .collect();
    OrientedPointCloud::new(points).unwrap()
}

/// Points jittered over the square `[-extent, extent]^2` of the plane
/// `z = offset`, normals +z, optional noise of deviation `sigma` along
/// the normal.
pub fn plane_cloud(n: usize, extent: f64, offset: f64, sigma: f64, seed: u64) -> OrientedPointCloud {
    let mut rng = rng(seed);
    let points = (0..n)
        .map(|_| {
            // Sum of 12 uniforms approximates the normal law well enough.
            let noise: f64 = if sigma > 0.0 {
                let s: f64 = (0..12).map(|_| rng.gen_range(-0.5..0.5)).sum();
                sigma * s
            } else {
                0.0
            };
            OrientedPoint {
                position: Point3::new(
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                    offset + noise,
                ),
                normal: Vector3::z(),
            }
        })
        .collect();
    OrientedPointCloud::new(points).unwrap()
}

/// Concave dihedral of opening angle `angle_rad` with the edge along y.
/// Face A runs along +x with normal +z; face B runs along
/// `(cos a, 0, sin a)` with normal `(sin a, 0, -cos a)`.
pub fn dihedral_cloud(n: usize, angle_rad: f64, extent: f64, seed: u64) -> OrientedPointCloud {
    let mut rng = rng(seed);
    let (sa, ca) = angle_rad.sin_cos();
    let dirs = [
        (Vector3::x(), Vector3::z()),
        (Vector3::new(ca, 0.0, sa), Vector3::new(sa, 0.0, -ca)),
    ];
    let points = (0..n)
        .map(|i| {
            let (dir, normal) = dirs[i % 2];
            let r = rng.gen_range(0.05 * extent..extent);
            let y = rng.gen_range(-extent..extent);
            OrientedPoint { position: Point3::from(dir * r + Vector3::y() * y), normal }
        })
        .collect();
    OrientedPointCloud::new(points).unwrap()
}

/// Concave three-face corner at the origin: faces `{x=0}`, `{y=0}`,
/// `{z=0}` restricted to the positive quadrant of the other axes, with
/// normals +x, +y, +z.
pub fn corner3_cloud(n: usize, extent: f64, seed: u64) -> OrientedPointCloud {
    let mut rng = rng(seed);
    let points = (0..n)
        .map(|i| {
            let a = rng.gen_range(0.05 * extent..extent);
            let b = rng.gen_range(0.05 * extent..extent);
            let (position, normal) = match i % 3 {
                0 => (Point3::new(0.0, a, b), Vector3::x()),
                1 => (Point3::new(a, 0.0, b), Vector3::y()),
                _ => (Point3::new(a, b, 0.0), Vector3::z()),
            };
            OrientedPoint { position, normal }
        })
        .collect();
    OrientedPointCloud::new(points).unwrap()
}

/// Concave four-face corner: the boundary of the open cone
/// `{p . n_i > 0 for all i}` with normals tilted 60 degrees off +z toward
/// +-x and +-y. Each facet is sampled inside its validity sector.
pub fn corner4_cloud(n: usize, extent: f64, seed: u64) -> OrientedPointCloud {
    let mut rng = rng(seed);
    let s = (60.0f64).to_radians().sin();
    let c = (60.0f64).to_radians().cos();
    let normals = [
        Vector3::new(s, 0.0, c),
        Vector3::new(-s, 0.0, c),
        Vector3::new(0.0, s, c),
        Vector3::new(0.0, -s, c),
    ];
    // Facet i basis: w1 along the edge direction, w2 down-slope.
    let bases = [
        (Vector3::y(), Vector3::new(-c, 0.0, s)),
        (Vector3::y(), Vector3::new(c, 0.0, s)),
        (Vector3::x(), Vector3::new(0.0, -c, s)),
        (Vector3::x(), Vector3::new(0.0, c, s)),
    ];
    let points = (0..n)
        .map(|i| {
            let f = i % 4;
            let (w1, w2) = bases[f];
            let b = rng.gen_range(0.05 * extent..extent);
            let a = rng.gen_range(-0.95 * b * c..0.95 * b * c);
            OrientedPoint { position: Point3::from(w1 * a + w2 * b), normal: normals[f] }
        })
        .collect();
    OrientedPointCloud::new(points).unwrap()
}

/// `n` evenly spaced points on the circle of the given radius in the
/// xy-plane, radial normals.
pub fn circle_cloud(n: usize, radius: f64) -> OrientedPointCloud {
    let points = (0..n)
        .map(|i| {
            let phi = std::f64::consts::TAU * i as f64 / n as f64;
            let normal = Vector3::new(phi.cos(), phi.sin(), 0.0);
            OrientedPoint { position: Point3::from(normal * radius), normal }
        })
        .collect();
    OrientedPointCloud::new(points).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn facet_clouds_are_union_type() {
        // Every sample of a sharp-feature cloud must sit on the
        // nonnegative side of the other faces' planes (through origin).
        for cloud in [
            dihedral_cloud(60, std::f64::consts::FRAC_PI_2, 1.0, 1),
            dihedral_cloud(60, 1.0, 1.0, 2),
            corner3_cloud(60, 1.0, 3),
            corner4_cloud(80, 1.0, 4),
        ] {
            for p in cloud.points() {
                for q in cloud.points() {
                    let side = p.position.coords.dot(&q.normal);
                    assert!(side >= -1e-12, "point on negative side: {side}");
                }
            }
        }
    }

    #[test]
    fn sphere_cloud_is_on_the_sphere() {
        let c = Point3::new(1.0, -2.0, 0.5);
        let cloud = sphere_cloud(500, c, 2.0);
        for p in cloud.points() {
            assert!(((p.position - c).norm() - 2.0).abs() < 1e-12);
            assert!((p.normal - (p.position - c).normalize()).norm() < 1e-12);
        }
    }
}
