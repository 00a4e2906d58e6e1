//! Node-centred scalar grids: trilinear evaluation, exact integrals of
//! the interpolant over boxes and axis-aligned rectangles (used by the
//! weighted partition cost), and the `SVGRID1` binary/ASCII formats.
//!
//! Binary layout: magic `SVGRID1`, three little-endian u32 dims, six
//! little-endian f64 bounds (min xyz then max xyz), then `nx*ny*nz` f64
//! samples with x fastest.

use crate::error::{Error, Result};
use crate::geometry::Box3;
use nalgebra::Point3;
use std::io::{Read, Write};

pub const GRID_MAGIC: &[u8; 7] = b"SVGRID1";

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub dims: [usize; 3],
    pub bounds: Box3,
    /// Node values, x fastest: index = ix + nx*(iy + ny*iz).
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(dims: [usize; 3], bounds: Box3, values: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid("grid needs at least 2 nodes per axis"));
        }
        if values.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::invalid(format!(
                "grid value count {} does not match dims {:?}",
                values.len(),
                dims
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid values must be finite"));
        }
        if (0..3).any(|k| bounds.max[k] <= bounds.min[k]) {
            return Err(Error::invalid("grid bounds must have positive extent"));
        }
        Ok(Self { dims, bounds, values })
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    /// Node position along an axis.
    pub fn node_coord(&self, axis: usize, i: usize) -> f64 {
        let n = self.dims[axis];
        self.bounds.min[axis]
            + (self.bounds.max[axis] - self.bounds.min[axis]) * i as f64 / (n - 1) as f64
    }

    fn axis_cell(&self, axis: usize, x: f64) -> (usize, f64) {
        let n = self.dims[axis];
        let lo = self.bounds.min[axis];
        let hi = self.bounds.max[axis];
        let s = ((x - lo) / (hi - lo) * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        (i, s - i as f64)
    }

    /// Trilinear interpolation, clamped to the bounds.
    pub fn eval(&self, p: &Point3<f64>) -> f64 {
        let (ix, fx) = self.axis_cell(0, p.x);
        let (iy, fy) = self.axis_cell(1, p.y);
        let (iz, fz) = self.axis_cell(2, p.z);
        let mut acc = 0.0;
        for (dz, wz) in [(0, 1.0 - fz), (1, fz)] {
            for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                    acc += wx * wy * wz * self.values[self.index(ix + dx, iy + dy, iz + dz)];
                }
            }
        }
        acc
    }

    /// Integral over `[lo, hi]` of the 1-D hat basis function at node `i`.
    fn hat_integral(&self, axis: usize, i: usize, lo: f64, hi: f64) -> f64 {
        let n = self.dims[axis];
        let step = (self.bounds.max[axis] - self.bounds.min[axis]) / (n - 1) as f64;
        let xi = self.node_coord(axis, i);
        let mut total = 0.0;
        // Rising edge on [xi - step, xi], falling on [xi, xi + step].
        if i > 0 {
            let (a, b) = ((xi - step).max(lo), xi.min(hi));
            if b > a {
                // integral of (x - (xi - step)) / step
                let f = |x: f64| (x - (xi - step)).powi(2) / (2.0 * step);
                total += f(b) - f(a);
            }
        }
        if i + 1 < n {
            let (a, b) = (xi.max(lo), (xi + step).min(hi));
            if b > a {
                let f = |x: f64| -((xi + step) - x).powi(2) / (2.0 * step);
                total += f(b) - f(a);
            }
        }
        total
    }

    /// Hat basis value at a clamped coordinate.
    fn hat_value(&self, axis: usize, i: usize, x: f64) -> f64 {
        let n = self.dims[axis];
        let step = (self.bounds.max[axis] - self.bounds.min[axis]) / (n - 1) as f64;
        let xi = self.node_coord(axis, i);
        let x = x.clamp(self.bounds.min[axis], self.bounds.max[axis]);
        let d = (x - xi).abs() / step;
        if d >= 1.0 {
            0.0
        } else if (i == 0 && x < xi) || (i == n - 1 && x > xi) {
            1.0
        } else {
            1.0 - d
        }
    }

    /// Exact integral of the trilinear interpolant over the box clipped
    /// to the grid bounds.
    pub fn integrate_box(&self, b: &Box3) -> f64 {
        let lo: Vec<f64> = (0..3).map(|k| b.min[k].max(self.bounds.min[k])).collect();
        let hi: Vec<f64> = (0..3).map(|k| b.max[k].min(self.bounds.max[k])).collect();
        if (0..3).any(|k| hi[k] <= lo[k]) {
            return 0.0;
        }
        let ints: Vec<Vec<f64>> = (0..3)
            .map(|k| (0..self.dims[k]).map(|i| self.hat_integral(k, i, lo[k], hi[k])).collect())
            .collect();
        self.separable_sum(&ints)
    }

    /// Exact integral of the interpolant over an axis-aligned rectangle
    /// in the plane `x[axis] = pos`. `rect` gives the (lo, hi) ranges of
    /// the two remaining axes in increasing-axis order.
    pub fn integrate_face(&self, axis: usize, pos: f64, rect: [(f64, f64); 2]) -> f64 {
        let others: Vec<usize> = (0..3).filter(|&k| k != axis).collect();
        let mut factors: Vec<Vec<f64>> = vec![Vec::new(); 3];
        factors[axis] = (0..self.dims[axis]).map(|i| self.hat_value(axis, i, pos)).collect();
        for (slot, &k) in others.iter().enumerate() {
            let (lo, hi) = rect[slot];
            let lo = lo.max(self.bounds.min[k]);
            let hi = hi.min(self.bounds.max[k]);
            if hi <= lo {
                return 0.0;
            }
            factors[k] = (0..self.dims[k]).map(|i| self.hat_integral(k, i, lo, hi)).collect();
        }
        self.separable_sum(&factors)
    }

    fn separable_sum(&self, factors: &[Vec<f64>]) -> f64 {
        let mut acc = 0.0;
        for iz in 0..self.dims[2] {
            let wz = factors[2][iz];
            if wz == 0.0 {
                continue;
            }
            for iy in 0..self.dims[1] {
                let wyz = factors[1][iy] * wz;
                if wyz == 0.0 {
                    continue;
                }
                for ix in 0..self.dims[0] {
                    acc += factors[0][ix] * wyz * self.values[self.index(ix, iy, iz)];
                }
            }
        }
        acc
    }

    /// Total integral over the whole grid domain.
    pub fn total_integral(&self) -> f64 {
        self.integrate_box(&self.bounds)
    }

    /// Integral of the interpolant over the boundary surface of the grid
    /// domain (all six faces).
    pub fn boundary_integral(&self) -> f64 {
        let mut total = 0.0;
        for axis in 0..3 {
            let others: Vec<usize> = (0..3).filter(|&k| k != axis).collect();
            let rect = [
                (self.bounds.min[others[0]], self.bounds.max[others[0]]),
                (self.bounds.min[others[1]], self.bounds.max[others[1]]),
            ];
            total += self.integrate_face(axis, self.bounds.min[axis], rect);
            total += self.integrate_face(axis, self.bounds.max[axis], rect);
        }
        total
    }

    /// Validates use as a weight field: nonnegative and bounded.
    pub fn validate_weight(&self) -> Result<()> {
        if self.values.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("weight grid must be nonnegative"));
        }
        if self.total_integral() <= 0.0 {
            return Err(Error::invalid("weight grid integrates to zero"));
        }
        Ok(())
    }

    pub fn write_binary(&self, w: &mut dyn Write) -> Result<()> {
        w.write_all(GRID_MAGIC)?;
        for k in 0..3 {
            w.write_all(&(self.dims[k] as u32).to_le_bytes())?;
        }
        for k in 0..3 {
            w.write_all(&self.bounds.min[k].to_le_bytes())?;
        }
        for k in 0..3 {
            w.write_all(&self.bounds.max[k].to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut dyn Read) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(Error::invalid("bad grid magic"));
        }
        let mut u32buf = [0u8; 4];
        let mut dims = [0usize; 3];
        for d in &mut dims {
            r.read_exact(&mut u32buf)?;
            *d = u32::from_le_bytes(u32buf) as usize;
        }
        let mut f64buf = [0u8; 8];
        let mut bounds = [0f64; 6];
        for b in &mut bounds {
            r.read_exact(&mut f64buf)?;
            *b = f64::from_le_bytes(f64buf);
        }
        let count = dims[0]
            .checked_mul(dims[1])
            .and_then(|n| n.checked_mul(dims[2]))
            .ok_or_else(|| Error::invalid("grid dims overflow"))?;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut f64buf)?;
            values.push(f64::from_le_bytes(f64buf));
        }
        let bounds = Box3::new(
            Point3::new(bounds[0], bounds[1], bounds[2]),
            Point3::new(bounds[3], bounds[4], bounds[5]),
        )?;
        Self::new(dims, bounds, values)
    }

    /// Human-readable variant: `SVGRID1 nx ny nz`, a bounds line, then
    /// samples (x fastest), 17 significant digits.
    pub fn write_ascii(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(w, "SVGRID1 {} {} {}", self.dims[0], self.dims[1], self.dims[2])?;
        writeln!(
            w,
            "{:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
            self.bounds.min.x,
            self.bounds.min.y,
            self.bounds.min.z,
            self.bounds.max.x,
            self.bounds.max.y,
            self.bounds.max.z
        )?;
        for chunk in self.values.chunks(self.dims[0]) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_ascii(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        if tokens.next() != Some("SVGRID1") {
            return Err(Error::invalid("bad ascii grid magic"));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::invalid("bad grid dims"))?;
        }
        let mut nums = Vec::new();
        for t in tokens {
            nums.push(t.parse::<f64>().map_err(|_| Error::invalid("bad grid number"))?);
        }
        if nums.len() < 6 {
            return Err(Error::invalid("missing grid bounds"));
        }
        let bounds = Box3::new(
            Point3::new(nums[0], nums[1], nums[2]),
            Point3::new(nums[3], nums[4], nums[5]),
        )?;
        Self::new(dims, bounds, nums[6..].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(dims: [usize; 3], f: impl Fn(f64, f64, f64) -> f64) -> ScalarGrid {
        let bounds = Box3::new(Point3::origin(), Point3::new(1.0, 1.0, 1.0)).unwrap();
        let mut values = Vec::new();
        for iz in 0..dims[2] {
            for iy in 0..dims[1] {
                for ix in 0..dims[0] {
                    let x = ix as f64 / (dims[0] - 1) as f64;
                    let y = iy as f64 / (dims[1] - 1) as f64;
                    let z = iz as f64 / (dims[2] - 1) as f64;
                    values.push(f(x, y, z));
                }
            }
        }
        ScalarGrid::new(dims, bounds, values).unwrap()
    }

    #[test]
    fn trilinear_reproduces_affine_fields() {
        let g = unit_grid([4, 3, 5], |x, y, z| 1.0 + 2.0 * x - 0.5 * y + 3.0 * z);
        let p = Point3::new(0.37, 0.81, 0.13);
        let expect = 1.0 + 2.0 * p.x - 0.5 * p.y + 3.0 * p.z;
        assert!((g.eval(&p) - expect).abs() < 1e-12);
    }

    #[test]
    fn integrals_match_closed_forms() {
        // Integral of x over [0.2, 0.7] x [0, 1] x [0.1, 0.9].
        let g = unit_grid([5, 4, 3], |x, _, _| x);
        let b = Box3::new(Point3::new(0.2, 0.0, 0.1), Point3::new(0.7, 1.0, 0.9)).unwrap();
        let expect = 0.5 * (0.7f64.powi(2) - 0.2f64.powi(2)) * 1.0 * 0.8;
        assert!((g.integrate_box(&b) - expect).abs() < 1e-12);

        // Face integral of the same field on the plane z = 0.35.
        let got = g.integrate_face(2, 0.35, [(0.2, 0.7), (0.0, 1.0)]);
        let expect = 0.5 * (0.7f64.powi(2) - 0.2f64.powi(2));
        assert!((got - expect).abs() < 1e-12);

        // Constant weight: boundary integral equals the surface area.
        let c = unit_grid([3, 3, 3], |_, _, _| 2.5);
        assert!((c.boundary_integral() - 2.5 * 6.0).abs() < 1e-12);
        assert!((c.total_integral() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn binary_roundtrip_is_exact() {
        let g = unit_grid([3, 2, 2], |x, y, z| (x * 17.3 + y * 0.01).sin() + z);
        let mut buf = Vec::new();
        g.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..7], GRID_MAGIC);
        let back = ScalarGrid::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(g, back);

        let mut text = Vec::new();
        g.write_ascii(&mut text).unwrap();
        let back = ScalarGrid::read_ascii(std::str::from_utf8(&text).unwrap()).unwrap();
        assert_eq!(g.dims, back.dims);
        for (a, b) in g.values.iter().zip(&back.values) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
