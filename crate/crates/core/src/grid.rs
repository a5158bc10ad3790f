//! Uniform cell-centred Cartesian grids on the box [−L, L]³ and the finite
//! difference stencils used throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Only three-dimensional boxes are supported by the field machinery.
pub const DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub half_length: f64,
    pub cells: usize,
}

impl GridSpec {
    pub fn new(half_length: f64, cells: usize) -> Result<Self> {
        let spec = Self { half_length, cells };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_length > 0.0) || !self.half_length.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "half length {} must be positive",
                self.half_length
            )));
        }
        if self.cells < 8 {
            return Err(Error::InvalidParameter(format!(
                "need at least 8 cells per axis, got {}",
                self.cells
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / self.cells as f64
    }

    pub fn len(&self) -> usize {
        self.cells.pow(DIM as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.cells == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(DIM as i32)
    }

    /// Coordinate of cell centre `i` along any axis.
    pub fn center(&self, i: usize) -> f64 {
        -self.half_length + (i as f64 + 0.5) * self.spacing()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.cells + j) * self.cells + k
    }

    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let n = self.cells;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    pub fn point(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.unravel(idx);
        [self.center(i), self.center(j), self.center(k)]
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.cells.pow((DIM - 1 - axis) as u32)
    }

    /// Distance (in cells) of `idx` from the nearest box face.
    pub fn boundary_distance(&self, idx: usize) -> usize {
        let n = self.cells;
        self.unravel(idx)
            .iter()
            .map(|&i| i.min(n - 1 - i))
            .min()
            .unwrap_or(0)
    }

    /// Iterator over all cell-centre points.
    pub fn points(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        (0..self.len()).map(move |idx| self.point(idx))
    }

    pub fn same_as(&self, other: &GridSpec) -> bool {
        self.cells == other.cells && (self.half_length - other.half_length).abs() <= 1e-14 * self.half_length
    }
}

/// Scalar or vector samples on a grid, stored component-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub spec: GridSpec,
    pub components: usize,
    pub data: Vec<f64>,
}

impl GridField {
    pub fn zeros(spec: GridSpec, components: usize) -> Self {
        Self {
            spec,
            components,
            data: vec![0.0; spec.len() * components],
        }
    }

    pub fn scalar(spec: GridSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.len() {
            return Err(Error::GridMismatch(format!(
                "scalar field has {} samples, grid has {}",
                data.len(),
                spec.len()
            )));
        }
        Ok(Self {
            spec,
            components: 1,
            data,
        })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn([f64; 3]) -> f64) -> Self {
        let data = spec.points().map(f).collect();
        Self {
            spec,
            components: 1,
            data,
        }
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.spec.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.spec.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Accuracy order of the first-derivative stencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StencilOrder {
    #[serde(rename = "2")]
    Second,
    #[serde(rename = "4")]
    Fourth,
}

impl Default for StencilOrder {
    fn default() -> Self {
        StencilOrder::Fourth
    }
}

/// First derivative along `axis`. Interior points use central stencils; the
/// two cells next to each face use one-sided stencils of the same order.
pub fn derivative(spec: &GridSpec, src: &[f64], axis: usize, order: StencilOrder, dst: &mut [f64]) {
    let n = spec.cells;
    let stride = spec.stride(axis);
    let inv_h = 1.0 / spec.spacing();
    let outer = spec.len() / n;
    let line_start = |line: usize| -> usize {
        // decompose line number into the two non-axis indices
        let hi = line / stride;
        let lo = line % stride;
        hi * stride * n + lo
    };
    for line in 0..outer {
        let base = line_start(line);
        let at = |i: usize| src[base + i * stride];
        match order {
            StencilOrder::Fourth => {
                let c = inv_h / 12.0;
                dst[base] = c * (-25.0 * at(0) + 48.0 * at(1) - 36.0 * at(2) + 16.0 * at(3) - 3.0 * at(4));
                dst[base + stride] = c * (-3.0 * at(0) - 10.0 * at(1) + 18.0 * at(2) - 6.0 * at(3) + at(4));
                for i in 2..n - 2 {
                    dst[base + i * stride] =
                        c * (at(i - 2) - 8.0 * at(i - 1) + 8.0 * at(i + 1) - at(i + 2));
                }
                let m = n - 1;
                dst[base + (m - 1) * stride] =
                    -c * (-3.0 * at(m) - 10.0 * at(m - 1) + 18.0 * at(m - 2) - 6.0 * at(m - 3) + at(m - 4));
                dst[base + m * stride] =
                    -c * (-25.0 * at(m) + 48.0 * at(m - 1) - 36.0 * at(m - 2) + 16.0 * at(m - 3) - 3.0 * at(m - 4));
            }
            StencilOrder::Second => {
                let c = 0.5 * inv_h;
                dst[base] = c * (-3.0 * at(0) + 4.0 * at(1) - at(2));
                for i in 1..n - 1 {
                    dst[base + i * stride] = c * (at(i + 1) - at(i - 1));
                }
                let m = n - 1;
                dst[base + m * stride] = -c * (-3.0 * at(m) + 4.0 * at(m - 1) - at(m - 2));
            }
        }
    }
}

/// Convenience allocation wrapper around [`derivative`].
pub fn derivative_vec(spec: &GridSpec, src: &[f64], axis: usize, order: StencilOrder) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    derivative(spec, src, axis, order, &mut out);
    out
}

/// Seven-point Laplacian with zero values outside the box.
pub fn laplacian_7pt(spec: &GridSpec, src: &[f64]) -> Vec<f64> {
    let n = spec.cells;
    let inv_h2 = 1.0 / spec.spacing().powi(2);
    let mut out = vec![0.0; src.len()];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let idx = spec.index(i, j, k);
                let mut acc = -6.0 * src[idx];
                for (c, stride) in [(i, n * n), (j, n), (k, 1)] {
                    if c > 0 {
                        acc += src[idx - stride];
                    }
                    if c + 1 < n {
                        acc += src[idx + stride];
                    }
                }
                out[idx] = acc * inv_h2;
            }
        }
    }
    out
}

/// Tensor-product Lagrange interpolation of a scalar grid field at an
/// arbitrary point, using `width` nodes per axis (clamped at the faces).
pub fn interpolate(spec: &GridSpec, src: &[f64], x: [f64; 3], width: usize) -> f64 {
    let h = spec.spacing();
    let n = spec.cells;
    let mut idx = [[0usize; 8]; 3];
    let mut wts = [[0.0f64; 8]; 3];
    let width = width.clamp(2, 8).min(n);
    for a in 0..3 {
        let s = (x[a] + spec.half_length) / h - 0.5;
        let first = (s.floor() as isize - (width as isize / 2 - 1)).clamp(0, (n - width) as isize) as usize;
        for p in 0..width {
            idx[a][p] = first + p;
            let xp = (first + p) as f64;
            let mut w = 1.0;
            for q in 0..width {
                if q != p {
                    let xq = (first + q) as f64;
                    w *= (s - xq) / (xp - xq);
                }
            }
            wts[a][p] = w;
        }
    }
    let mut acc = 0.0;
    for p in 0..width {
        for q in 0..width {
            let wpq = wts[0][p] * wts[1][q];
            let base = spec.index(idx[0][p], idx[1][q], 0);
            for r in 0..width {
                acc += wpq * wts[2][r] * src[base + idx[2][r]];
            }
        }
    }
    acc
}
