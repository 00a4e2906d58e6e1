//! Numerical kernels: weighted least squares, 1-D root finding and
//! minimization over time intervals, and the closed-form symmetric 3x3
//! eigenvalue solver.
//!
//! Everything is a stateless pure function; randomness stays with callers.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

/// Tolerances and budgets for the numeric routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Bracket-width tolerance in time units.
    pub eps_root: f64,
    /// Function-value tolerance.
    pub eps_value: f64,
    pub max_iter: usize,
    /// Sampling density for interval minimization.
    pub time_samples_per_unit: usize,
    pub rng_seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { eps_root: 1e-9, eps_value: 1e-9, max_iter: 200, time_samples_per_unit: 64, rng_seed: 0 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps_root <= 0.0 || self.eps_value <= 0.0 || self.time_samples_per_unit == 0 {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if self.max_iter < 8 {
            return Err(Error::invalid("max_iter must be at least 8"));
        }
        Ok(())
    }
}

/// One row of a weighted least-squares system.
#[derive(Debug, Clone)]
pub struct WlsRow {
    pub basis: Vec<f64>,
    pub weight: f64,
    pub target: f64,
}

/// Solution of [`wls_fit`].
#[derive(Debug, Clone)]
pub struct WlsFit {
    pub coefficients: Vec<f64>,
    /// Set when rank deficiency forced a ridge fallback.
    pub degraded: bool,
}

/// Solves `argmin sum_i w_i (basis_i . c - target_i)^2` via the normal
/// equations. A system that is rank-deficient beyond 1e-10 relative gets a
/// ridge of `1e-8 * trace / n` added to the diagonal and the `degraded`
/// flag set.
pub fn wls_fit(rows: &[WlsRow]) -> Result<WlsFit> {
    if rows.is_empty() {
        return Err(Error::invalid("wls_fit needs at least one row"));
    }
    let n = rows[0].basis.len();
    if n == 0 {
        return Err(Error::invalid("wls_fit needs a nonempty basis"));
    }
    let mut any_weight = false;
    for row in rows {
        if row.basis.len() != n {
            return Err(Error::invalid("wls_fit rows have inconsistent basis sizes"));
        }
        if !row.weight.is_finite() || row.weight < 0.0 {
            return Err(Error::invalid("wls_fit weights must be finite and >= 0"));
        }
        if !row.target.is_finite() || row.basis.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("wls_fit rows must be finite"));
        }
        any_weight |= row.weight > 0.0;
    }
    if !any_weight {
        return Err(Error::invalid("wls_fit weights are all zero"));
    }

    let mut normal = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for row in rows {
        for i in 0..n {
            let wi = row.weight * row.basis[i];
            rhs[i] += wi * row.target;
            for j in i..n {
                normal[(i, j)] += wi * row.basis[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            normal[(i, j)] = normal[(j, i)];
        }
    }

    // Rank check on the symmetric normal matrix.
    let eigen = normal.clone().symmetric_eigen();
    let max_eig = eigen.eigenvalues.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    let min_eig = eigen.eigenvalues.iter().fold(f64::INFINITY, |m, &e| m.min(e));
    let degraded = max_eig == 0.0 || min_eig < 1e-10 * max_eig;
    let mut system = normal.clone();
    if degraded {
        let ridge = 1e-8 * normal.trace() / n as f64;
        for i in 0..n {
            system[(i, i)] += ridge;
        }
    }
    let solution = system
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| system.lu().solve(&rhs))
        .unwrap_or_else(|| DVector::zeros(n));
    Ok(WlsFit { coefficients: solution.iter().copied().collect(), degraded })
}

/// Bisection result with the iteration count the complexity bound talks
/// about.
#[derive(Debug, Clone, Copy)]
pub struct RootFind {
    pub root: f64,
    pub iterations: usize,
}

/// Bisection on a bracketing interval. Stops when `|f| <= eps_value` or
/// the bracket width drops to `eps_root`; the iteration count stays within
/// `ceil(log2(span / eps_root)) + 2`.
pub fn bisect_root_with_stats(
    f: &mut dyn FnMut(f64) -> f64,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<RootFind> {
    let (mut lo, mut hi) = (t0, t1);
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo * fhi > 0.0 {
        return Err(Error::Bracket { t0, t1 });
    }
    if flo.abs() <= cfg.eps_value {
        return Ok(RootFind { root: lo, iterations: 0 });
    }
    if fhi.abs() <= cfg.eps_value {
        return Ok(RootFind { root: hi, iterations: 0 });
    }
    let mut iterations = 0;
    while hi - lo > cfg.eps_root {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid.abs() <= cfg.eps_value {
            return Ok(RootFind { root: mid, iterations });
        }
        if flo * fmid <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fmid;
        }
        if mid == lo && mid == hi {
            break; // interval exhausted at f64 resolution
        }
    }
    Ok(RootFind { root: 0.5 * (lo + hi), iterations })
}

/// See [`bisect_root_with_stats`].
pub fn bisect_root(f: &mut dyn FnMut(f64) -> f64, t0: f64, t1: f64, cfg: &SolverConfig) -> Result<f64> {
    bisect_root_with_stats(f, t0, t1, cfg).map(|r| r.root)
}

/// Newton iteration started at `t_init`, clipped to `[t0, t1]`. Uses a
/// central difference with step `max(1e-7, 1e-7 |t|)` when no derivative is
/// given, and falls back to bisection whenever an iterate leaves the
/// bracket, the derivative collapses, or the budget runs out.
pub fn newton_root(
    f: &mut dyn FnMut(f64) -> f64,
    df: Option<&mut dyn FnMut(f64) -> f64>,
    t_init: f64,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let mut df = df;
    let mut t = t_init.clamp(t0, t1);
    for _ in 0..cfg.max_iter {
        let ft = f(t);
        if ft.abs() <= cfg.eps_value {
            return Ok(t);
        }
        let slope = match df.as_mut() {
            Some(d) => d(t),
            None => {
                let h = (1e-7f64).max(1e-7 * t.abs());
                (f(t + h) - f(t - h)) / (2.0 * h)
            }
        };
        if slope.abs() < 1e-14 {
            return bisect_root(f, t0, t1, cfg);
        }
        let next = t - ft / slope;
        if !next.is_finite() || next < t0 || next > t1 {
            return bisect_root(f, t0, t1, cfg);
        }
        if (next - t).abs() <= cfg.eps_root {
            return Ok(next);
        }
        t = next;
    }
    bisect_root(f, t0, t1, cfg)
}

/// Samples the interval uniformly, then golden-section refines around the
/// best sample. The returned value never exceeds the minimum over the
/// sample grid.
pub fn minimize_1d(f: &mut dyn FnMut(f64) -> f64, t0: f64, t1: f64, cfg: &SolverConfig) -> (f64, f64) {
    debug_assert!(t1 >= t0);
    if t1 <= t0 {
        return (t0, f(t0));
    }
    let n = (cfg.time_samples_per_unit as f64 * (t1 - t0)).ceil() as usize;
    let n = n.max(8);
    let mut best = (t0, f64::INFINITY);
    let mut best_i = 0;
    for i in 0..=n {
        let t = t0 + (t1 - t0) * i as f64 / n as f64;
        let v = f(t);
        if v < best.1 {
            best = (t, v);
            best_i = i;
        }
    }
    let step = (t1 - t0) / n as f64;
    let mut lo = (t0 + step * best_i.saturating_sub(1) as f64).max(t0);
    let mut hi = (t0 + step * (best_i + 1) as f64).min(t1);

    // Golden-section shrink; every probe can only improve the tracked best.
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    let track = |t: f64, v: f64, best: &mut (f64, f64)| {
        if v < best.1 {
            *best = (t, v);
        }
    };
    track(a, fa, &mut best);
    track(b, fb, &mut best);
    let mut iter = 0;
    while hi - lo > cfg.eps_root && iter < cfg.max_iter {
        iter += 1;
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
            track(a, fa, &mut best);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
            track(b, fb, &mut best);
        }
    }
    best
}

/// Smallest eigenvalue of a symmetric 3x3 matrix by the trigonometric
/// closed form, with its eigenvector.
pub fn min_eigenpair_sym3(s: &Matrix3<f64>) -> Result<(f64, Vector3<f64>)> {
    let asym = (s - s.transpose()).norm();
    if asym > 1e-9 * (1.0 + s.norm()) {
        return Err(Error::invalid("matrix is not symmetric within 1e-9"));
    }
    let s = 0.5 * (s + s.transpose());
    let p1 = s[(0, 1)].powi(2) + s[(0, 2)].powi(2) + s[(1, 2)].powi(2);
    let lambda = if p1 == 0.0 {
        s[(0, 0)].min(s[(1, 1)]).min(s[(2, 2)])
    } else {
        let q = s.trace() / 3.0;
        let p2 = (s[(0, 0)] - q).powi(2) + (s[(1, 1)] - q).powi(2) + (s[(2, 2)] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let b = (s - Matrix3::identity() * q) / p;
        let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos()
    };

    // Eigenvector: the largest cross product of rows of (S - lambda I)
    // spans the null space; for repeated eigenvalues any vector orthogonal
    // to the strongest remaining row works.
    let a = s - Matrix3::identity() * lambda;
    let rows = [
        Vector3::new(a[(0, 0)], a[(0, 1)], a[(0, 2)]),
        Vector3::new(a[(1, 0)], a[(1, 1)], a[(1, 2)]),
        Vector3::new(a[(2, 0)], a[(2, 1)], a[(2, 2)]),
    ];
    let mut best = Vector3::zeros();
    for i in 0..3 {
        for j in (i + 1)..3 {
            let c = rows[i].cross(&rows[j]);
            if c.norm() > best.norm() {
                best = c;
            }
        }
    }
    let scale = s.norm().max(1.0);
    let vector = if best.norm() > 1e-12 * scale {
        best.normalize()
    } else {
        let strongest = rows
            .iter()
            .copied()
            .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
            .unwrap();
        if strongest.norm() > 1e-12 * scale {
            // Rank-1 deficiency: anything orthogonal to the remaining row.
            let seed = if strongest.x.abs() < 0.9 * strongest.norm() { Vector3::x() } else { Vector3::y() };
            (seed - strongest * (seed.dot(&strongest) / strongest.norm_squared())).normalize()
        } else {
            Vector3::x()
        }
    };
    Ok((lambda, vector))
}

/// Smallest eigenvalue of a symmetric 3x3 matrix.
pub fn min_eigenvalue_sym3(s: &Matrix3<f64>) -> Result<f64> {
    min_eigenpair_sym3(s).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn wls_recovers_basis_member() {
        // f(x) = x^2 sampled exactly; quadratic basis (1, x, x^2).
        let rows: Vec<WlsRow> = (0..6)
            .map(|i| {
                let x = i as f64 * 0.4 - 1.0;
                WlsRow { basis: vec![1.0, x, x * x], weight: 1.0, target: x * x }
            })
            .collect();
        let fit = wls_fit(&rows).unwrap();
        assert!(!fit.degraded);
        assert!((fit.coefficients[0]).abs() < 1e-9);
        assert!((fit.coefficients[1]).abs() < 1e-9);
        assert!((fit.coefficients[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn wls_flags_rank_deficiency() {
        let row = WlsRow { basis: vec![1.0, 2.0, 4.0], weight: 1.0, target: 3.0 };
        let fit = wls_fit(&[row.clone(), row.clone(), row]).unwrap();
        assert!(fit.degraded);
        assert!(fit.coefficients.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn wls_matches_closed_form_weighted_regression() {
        // Weighted 1-D line fit against the closed-form solution.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<WlsRow> = (0..100)
            .map(|_| {
                let x: f64 = rng.gen_range(-2.0..2.0);
                let w: f64 = rng.gen_range(0.1..3.0);
                let y = 1.7 * x - 0.3 + rng.gen_range(-0.05..0.05);
                WlsRow { basis: vec![1.0, x], weight: w, target: y }
            })
            .collect();
        let fit = wls_fit(&rows).unwrap();
        let sw: f64 = rows.iter().map(|r| r.weight).sum();
        let sx: f64 = rows.iter().map(|r| r.weight * r.basis[1]).sum();
        let sy: f64 = rows.iter().map(|r| r.weight * r.target).sum();
        let sxx: f64 = rows.iter().map(|r| r.weight * r.basis[1] * r.basis[1]).sum();
        let sxy: f64 = rows.iter().map(|r| r.weight * r.basis[1] * r.target).sum();
        let slope = (sw * sxy - sx * sy) / (sw * sxx - sx * sx);
        let intercept = (sy - slope * sx) / sw;
        assert!((fit.coefficients[0] - intercept).abs() < 1e-9);
        assert!((fit.coefficients[1] - slope).abs() < 1e-9);
    }

    #[test]
    fn wls_rejects_zero_weights() {
        let rows = vec![WlsRow { basis: vec![1.0], weight: 0.0, target: 1.0 }];
        assert!(wls_fit(&rows).is_err());
    }

    #[test]
    fn wls_perturbation_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<WlsRow> = (0..40)
            .map(|_| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                WlsRow {
                    basis: vec![1.0, x, x * x],
                    weight: rng.gen_range(0.5..2.0),
                    target: (3.0 * x).sin(),
                }
            })
            .collect();
        let fit = wls_fit(&rows).unwrap();
        let residual = |c: &[f64]| -> f64 {
            rows.iter()
                .map(|r| {
                    let pred: f64 = r.basis.iter().zip(c).map(|(b, k)| b * k).sum();
                    r.weight * (pred - r.target).powi(2)
                })
                .sum()
        };
        let base = residual(&fit.coefficients);
        for i in 0..3 {
            for delta in [-1e-6, 1e-6] {
                let mut c = fit.coefficients.clone();
                c[i] += delta;
                assert!(residual(&c) >= base - 1e-12, "perturbing c[{i}] decreased the residual");
            }
        }
    }

    #[test]
    fn bisect_examples() {
        let c = cfg();
        let r = bisect_root(&mut |t| t - 0.5, 0.0, 1.0, &c).unwrap();
        assert!((r - 0.5).abs() <= 1e-8);
        let r = bisect_root(&mut |t: f64| (std::f64::consts::PI * t).cos(), 0.0, 1.0, &c).unwrap();
        assert!((r - 0.5).abs() <= 1e-8);
        assert!(matches!(
            bisect_root(&mut |t| t * t + 1.0, 0.0, 1.0, &c),
            Err(Error::Bracket { .. })
        ));
    }

    #[test]
    fn bisect_iteration_bound() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let root: f64 = rng.gen_range(-3.0..3.0);
            let lo = root - rng.gen_range(0.01..4.0);
            let hi = root + rng.gen_range(0.01..4.0);
            let got = bisect_root_with_stats(&mut |t| (t - root).powi(3) + (t - root), lo, hi, &c).unwrap();
            let budget = ((hi - lo) / c.eps_root).log2().ceil() as usize + 2;
            assert!(got.iterations <= budget, "{} > {}", got.iterations, budget);
            assert!((got.root - root).abs() <= 10.0 * c.eps_root.max(1e-7));
        }
    }

    #[test]
    fn newton_examples() {
        let c = cfg();
        let r = newton_root(&mut |t| t * t - 2.0, None, 1.5, 1.0, 2.0, &c).unwrap();
        assert!((r - 2.0f64.sqrt()).abs() <= 1e-8);

        // Linear function converges in <= 2 iterations: count evaluations.
        let mut evals = 0;
        let mut df_evals = 0;
        let r = newton_root(
            &mut |t| {
                evals += 1;
                3.0 * t - 1.2
            },
            Some(&mut |_| {
                df_evals += 1;
                3.0
            }),
            0.9,
            0.0,
            1.0,
            &c,
        )
        .unwrap();
        assert!((r - 0.4).abs() <= 1e-9);
        assert!(evals <= 2, "linear newton took {evals} evaluations");

        // Flat cubic: the derivative collapses near the triple root, the
        // solver falls back and lands on the bisection answer. The value
        // tolerance is disabled so both localize the root to eps_root.
        let tight = SolverConfig { eps_value: 1e-300, ..c };
        let flat = |t: f64| (t - 0.3).powi(3);
        let nr = newton_root(
            &mut { flat },
            Some(&mut |t: f64| 3.0 * (t - 0.3).powi(2)),
            0.9,
            0.0,
            1.0,
            &tight,
        )
        .unwrap();
        let br = bisect_root(&mut { flat }, 0.0, 1.0, &tight).unwrap();
        assert!((nr - br).abs() <= 10.0 * tight.eps_root, "{nr} vs {br}");
    }

    #[test]
    fn newton_and_bisect_agree_when_both_succeed() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let root: f64 = rng.gen_range(-1.0..1.0);
            let scale: f64 = rng.gen_range(0.5..2.0);
            let f = move |t: f64| scale * (t - root) * ((t - root).powi(2) + 0.3);
            let lo = root - rng.gen_range(0.1..1.0);
            let hi = root + rng.gen_range(0.1..1.0);
            let nr = newton_root(&mut { f }, None, 0.5 * (lo + hi), lo, hi, &c).unwrap();
            let br = bisect_root(&mut { f }, lo, hi, &c).unwrap();
            assert!((nr - br).abs() <= 10.0 * c.eps_root.max(1e-7), "{nr} vs {br}");
        }
    }

    #[test]
    fn minimize_examples() {
        let c = cfg();
        let (t, v) = minimize_1d(&mut |t| (t - 0.25) * (t - 0.25), 0.0, 1.0, &c);
        assert!((t - 0.25).abs() <= 1e-6);
        assert!(v <= 1e-12);

        let (_, v) = minimize_1d(&mut |_| 4.2, 0.0, 1.0, &c);
        assert_eq!(v, 4.2);

        // Dense-sampling oracle.
        let f = |t: f64| (2.0 * std::f64::consts::PI * t).sin() + t;
        let (got_t, got_v) = minimize_1d(&mut { f }, 0.0, 1.0, &c);
        let mut oracle = (0.0, f64::INFINITY);
        for i in 0..=1_000_000 {
            let t = i as f64 / 1e6;
            let v = f(t);
            if v < oracle.1 {
                oracle = (t, v);
            }
        }
        assert!((got_v - oracle.1).abs() <= 1e-6, "{got_v} vs {}", oracle.1);
        assert!((got_t - oracle.0).abs() <= 1e-3);
    }

    #[test]
    fn minimize_not_above_its_grid() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let a: f64 = rng.gen_range(-2.0..2.0);
            let b: f64 = rng.gen_range(1.0..9.0);
            let f = move |t: f64| (a * t).sin() * (b * t).cos() + 0.1 * t;
            let (_, v) = minimize_1d(&mut { f }, 0.0, 1.0, &c);
            let n = (c.time_samples_per_unit as f64).ceil() as usize;
            let grid_min = (0..=n).map(|i| f(i as f64 / n as f64)).fold(f64::INFINITY, f64::min);
            assert!(v <= grid_min + 1e-15);
        }
    }

    #[test]
    fn eigen_examples() {
        let d = Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0));
        assert!((min_eigenvalue_sym3(&d).unwrap() - 1.0).abs() < 1e-12);
        assert!((min_eigenvalue_sym3(&Matrix3::identity()).unwrap() - 1.0).abs() < 1e-12);
        assert!(min_eigenvalue_sym3(&Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn eigen_against_characteristic_cubic() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let mut m = Matrix3::zeros();
            for i in 0..3 {
                for j in i..3 {
                    let v = rng.gen_range(-2.0..2.0);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            let (lambda, vector) = min_eigenpair_sym3(&m).unwrap();
            // Oracle: smallest real root of det(S - x I) by safeguarded scan.
            let det = |x: f64| (m - Matrix3::identity() * x).determinant();
            let bound = m.norm() + 1.0;
            let mut oracle = f64::INFINITY;
            let n = 20_000;
            let mut prev = det(-bound);
            for i in 1..=n {
                let x = -bound + 2.0 * bound * i as f64 / n as f64;
                let d = det(x);
                if prev * d <= 0.0 {
                    let mut lo = -bound + 2.0 * bound * (i - 1) as f64 / n as f64;
                    let mut hi = x;
                    for _ in 0..80 {
                        let mid = 0.5 * (lo + hi);
                        if det(lo) * det(mid) <= 0.0 { hi = mid } else { lo = mid }
                    }
                    oracle = oracle.min(0.5 * (lo + hi));
                    break;
                }
                prev = d;
            }
            assert!((lambda - oracle).abs() < 1e-6, "{lambda} vs oracle {oracle}");
            let residual = (m * vector - vector * lambda).norm();
            assert!(residual <= 1e-8 * m.norm().max(1.0), "residual {residual}");
        }
    }
}
