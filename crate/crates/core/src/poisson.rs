//! Free-space Poisson solves Δφ = f in three dimensions for compactly
//! supported right-hand sides.
//!
//! The potential is the discrete Newtonian potential: the zero-padded
//! convolution of f with the Green's function of the seven-point Laplacian on
//! the infinite lattice. It decays at infinity like the continuum kernel
//! −1/(4π|x|), satisfies Δ_h φ = f exactly in the interior, and carries no
//! periodic images.

use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft3;
use crate::grid::{derivative, laplacian_7pt, GridField, GridSpec, StencilOrder};
use crate::lattice_green::LatticeGreen;
use crate::params::{FluidParams, Species};

/// Cells next to each face that must carry a vanishing right-hand side.
pub const BOUNDARY_MARGIN: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoissonMethod {
    Convolution,
    Oracle,
}

#[derive(Clone, Debug)]
pub struct PoissonProblem {
    pub rhs: GridField,
    pub method: PoissonMethod,
    pub support_radius: f64,
}

impl PoissonProblem {
    pub fn new(rhs: GridField, method: PoissonMethod) -> Self {
        let support_radius = support_radius(&rhs.spec, &rhs.data, 0.0);
        Self {
            rhs,
            method,
            support_radius,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PoissonSolution {
    pub phi: GridField,
    pub grad_phi: GridField,
}

/// Largest |x| over cells where |f| exceeds `threshold · max|f|`.
pub fn support_radius(spec: &GridSpec, f: &[f64], threshold: f64) -> f64 {
    let fmax = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if fmax == 0.0 {
        return 0.0;
    }
    let cut = threshold * fmax;
    f.iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > cut)
        .map(|(i, _)| {
            let p = spec.point(i);
            (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
        })
        .fold(0.0, f64::max)
}

/// f = C_i n_i^{2/(γ_i−1)} − C_e n_e^{2/(γ_e−1)}.
pub fn rhs_from_densities(n_i: &[f64], n_e: &[f64], spec: &GridSpec, params: &FluidParams) -> Result<Vec<f64>> {
    if n_i.len() != n_e.len() || n_i.len() != spec.len() {
        return Err(Error::GridMismatch("density fields differ in length".into()));
    }
    let (ci, ce) = (params.poisson_coeff(Species::Ion), params.poisson_coeff(Species::Electron));
    let (pi, pe) = (params.ion.density_exponent(), params.electron.density_exponent());
    let mut f = Vec::with_capacity(n_i.len());
    for (idx, (&a, &b)) in n_i.iter().zip(n_e).enumerate() {
        if a < 0.0 || b < 0.0 {
            return Err(Error::NegativeDensity {
                index: idx,
                location: spec.point(idx),
                value: a.min(b),
            });
        }
        f.push(ci * density_power(a, pi) - ce * density_power(b, pe));
    }
    Ok(f)
}

/// n^p with an integer fast path.
pub fn density_power(n: f64, p: f64) -> f64 {
    let r = p.round();
    if (p - r).abs() < 1e-12 && r.abs() < 64.0 {
        n.powi(r as i32)
    } else {
        n.powf(p)
    }
}

/// Reusable convolution solver for one grid.
pub struct FreeSpacePoisson {
    spec: GridSpec,
    fft: Fft3,
    kernel_hat: Vec<f64>,
    green: Arc<LatticeGreen>,
    gradient_order: StencilOrder,
}

impl FreeSpacePoisson {
    pub fn new(spec: GridSpec) -> Self {
        let n = spec.cells;
        let m = 2 * n;
        let green = LatticeGreen::shared(n - 1);
        let h2 = spec.spacing().powi(2);
        let mut kernel = vec![Complex64::new(0.0, 0.0); m * m * m];
        let wrap = |i: usize| -> Option<i64> {
            match i.cmp(&n) {
                std::cmp::Ordering::Less => Some(i as i64),
                std::cmp::Ordering::Equal => None,
                std::cmp::Ordering::Greater => Some(i as i64 - m as i64),
            }
        };
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    if let (Some(a), Some(b), Some(c)) = (wrap(i), wrap(j), wrap(k)) {
                        kernel[(i * m + j) * m + k] = Complex64::new(h2 * green.get([a, b, c]), 0.0);
                    }
                }
            }
        }
        let fft = Fft3::new(m);
        fft.forward(&mut kernel);
        // the kernel is real and even, so its transform is real
        let kernel_hat = kernel.iter().map(|c| c.re).collect();
        Self {
            spec,
            fft,
            kernel_hat,
            green,
            gradient_order: StencilOrder::Fourth,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Rejects right-hand sides that do not vanish near the faces.
    pub fn check_margin(&self, rhs: &[f64]) -> Result<()> {
        let fmax = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let worst = rhs
            .iter()
            .enumerate()
            .filter(|(i, _)| self.spec.boundary_distance(*i) < BOUNDARY_MARGIN)
            .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
        if worst > 1e-10 * fmax {
            return Err(Error::RhsOnBoundary(worst));
        }
        Ok(())
    }

    /// Discrete Newtonian potential of `rhs`.
    pub fn potential(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.spec.len() {
            return Err(Error::GridMismatch(format!(
                "rhs has {} samples, solver grid has {}",
                rhs.len(),
                self.spec.len()
            )));
        }
        self.check_margin(rhs)?;
        let n = self.spec.cells;
        let m = 2 * n;
        let mut buf = vec![Complex64::new(0.0, 0.0); m * m * m];
        for i in 0..n {
            for j in 0..n {
                let src = self.spec.index(i, j, 0);
                let dst = (i * m + j) * m;
                for k in 0..n {
                    buf[dst + k] = Complex64::new(rhs[src + k], 0.0);
                }
            }
        }
        self.fft.forward_pruned(&mut buf, n);
        for (v, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *v *= *k;
        }
        self.fft.inverse_pruned(&mut buf, n);
        let mut phi = vec![0.0; self.spec.len()];
        for i in 0..n {
            for j in 0..n {
                let dst = self.spec.index(i, j, 0);
                let src = (i * m + j) * m;
                for k in 0..n {
                    phi[dst + k] = buf[src + k].re;
                }
            }
        }
        Ok(phi)
    }

    /// Potential and its gradient (fourth-order differences of φ).
    pub fn solve_rhs(&self, rhs: &[f64]) -> Result<PoissonSolution> {
        let phi = self.potential(rhs)?;
        let mut grad = GridField::zeros(self.spec, 3);
        for axis in 0..3 {
            derivative(&self.spec, &phi, axis, self.gradient_order, grad.component_mut(axis));
        }
        Ok(PoissonSolution {
            phi: GridField::scalar(self.spec, phi)?,
            grad_phi: grad,
        })
    }

    /// Direct O(N·M) summation of the lattice kernel against `rhs` at the
    /// given cells; independent of the transform path.
    pub fn oracle_quadrature(&self, rhs: &[f64], query: &[[usize; 3]]) -> Vec<f64> {
        let spec = &self.spec;
        let h2 = spec.spacing().powi(2);
        let nz: Vec<(usize, f64)> = rhs.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        query
            .iter()
            .map(|q| {
                let mut acc = 0.0;
                for &(idx, f) in &nz {
                    let [a, b, c] = spec.unravel(idx);
                    let off = [q[0] as i64 - a as i64, q[1] as i64 - b as i64, q[2] as i64 - c as i64];
                    acc += f * self.green.get(off);
                }
                acc * h2
            })
            .collect()
    }

    pub fn solve(&self, problem: &PoissonProblem) -> Result<PoissonSolution> {
        if !problem.rhs.spec.same_as(&self.spec) {
            return Err(Error::GridMismatch("problem grid differs from solver grid".into()));
        }
        match problem.method {
            PoissonMethod::Convolution => self.solve_rhs(&problem.rhs.data),
            PoissonMethod::Oracle => {
                self.check_margin(&problem.rhs.data)?;
                let cells: Vec<[usize; 3]> = (0..self.spec.len()).map(|i| self.spec.unravel(i)).collect();
                let phi = self.oracle_quadrature(&problem.rhs.data, &cells);
                let mut grad = GridField::zeros(self.spec, 3);
                for axis in 0..3 {
                    derivative(&self.spec, &phi, axis, self.gradient_order, grad.component_mut(axis));
                }
                Ok(PoissonSolution {
                    phi: GridField::scalar(self.spec, phi)?,
                    grad_phi: grad,
                })
            }
        }
    }
}

/// Relative L² residual ‖Δ_h φ − f‖/‖f‖ over cells at least `margin` cells
/// inside the box.
pub fn laplacian_residual(spec: &GridSpec, phi: &[f64], f: &[f64], margin: usize) -> f64 {
    let lap = laplacian_7pt(spec, phi);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (l, v)) in lap.iter().zip(f).enumerate() {
        if spec.boundary_distance(i) >= margin {
            num += (l - v).powi(2);
            den += v * v;
        }
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Outward flux of ∇φ through the sphere of `radius` about the origin,
/// by Gauss–Legendre × trapezoid quadrature of interpolated ∇φ.
pub fn sphere_flux(grad_phi: &GridField, radius: f64, n_theta: usize) -> f64 {
    let spec = &grad_phi.spec;
    let (nodes, weights) = crate::lattice_green::gauss_legendre(n_theta);
    let n_phi = 2 * n_theta;
    let mut flux = 0.0;
    for (mu, w) in nodes.iter().zip(&weights) {
        let sin_t = (1.0 - mu * mu).sqrt();
        for p in 0..n_phi {
            let az = 2.0 * std::f64::consts::PI * p as f64 / n_phi as f64;
            let normal = [sin_t * az.cos(), sin_t * az.sin(), *mu];
            let x = normal.map(|c| c * radius);
            let mut dot = 0.0;
            for (axis, nc) in normal.iter().enumerate() {
                dot += nc * crate::grid::interpolate(spec, grad_phi.component(axis), x, 6);
            }
            flux += w * dot;
        }
    }
    flux * radius * radius * 2.0 * std::f64::consts::PI / n_phi as f64
}

/// Summary of the gradient-bound diagnostic |∇φ|_q / |f|_{qd/(q+d)}.
#[derive(Clone, Debug, serde::Serialize)]
pub struct GradientBoundReport {
    pub q: f64,
    pub grad_norm: f64,
    pub rhs_norm: f64,
    /// `None` when both norms vanish.
    pub ratio: Option<f64>,
}

/// Lq norm (Σ|f|^q h³)^{1/q} of a possibly vector-valued field.
fn lq_norm_components(field: &GridField, q: f64) -> f64 {
    let n = field.spec.len();
    let vol = field.spec.cell_volume();
    let mut acc = 0.0;
    for idx in 0..n {
        let mag2: f64 = (0..field.components).map(|c| field.data[c * n + idx].powi(2)).sum();
        acc += mag2.sqrt().powf(q);
    }
    (acc * vol).powf(1.0 / q)
}

pub fn gradient_bound_diagnostics(solver: &FreeSpacePoisson, f: &GridField, q: f64) -> Result<GradientBoundReport> {
    let d = 3.0;
    if !(q > 1.0f64.max(d / (d - 1.0))) {
        return Err(Error::InvalidParameter(format!("q = {q} must exceed max(1, d/(d-1))")));
    }
    let sol = solver.solve_rhs(&f.data)?;
    let grad_norm = lq_norm_components(&sol.grad_phi, q);
    let rhs_norm = lq_norm_components(f, q * d / (q + d));
    let ratio = if rhs_norm == 0.0 { None } else { Some(grad_norm / rhs_norm) };
    Ok(GradientBoundReport {
        q,
        grad_norm,
        rhs_norm,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::burgers::bump;

    fn blob(spec: GridSpec, center: [f64; 3], width: f64, amp: f64) -> GridField {
        GridField::from_fn(spec, |x| {
            let r = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2) + (x[2] - center[2]).powi(2)).sqrt();
            amp * bump(r / width)
        })
    }

    #[test]
    fn zero_rhs_gives_zero_potential() {
        let spec = GridSpec::new(1.0, 8).unwrap();
        let solver = FreeSpacePoisson::new(spec);
        let sol = solver.solve_rhs(&vec![0.0; spec.len()]).unwrap();
        assert!(sol.phi.max_abs() == 0.0 && sol.grad_phi.max_abs() == 0.0);
        let o = solver.oracle_quadrature(&vec![0.0; spec.len()], &[[3, 3, 3]]);
        assert_eq!(o[0], 0.0);
    }

    #[test]
    fn rejects_boundary_touching_rhs() {
        let spec = GridSpec::new(1.0, 8).unwrap();
        let solver = FreeSpacePoisson::new(spec);
        let mut f = vec![0.0; spec.len()];
        f[spec.index(0, 4, 4)] = 1.0;
        assert!(matches!(solver.potential(&f), Err(Error::RhsOnBoundary(_))));
    }

    #[test]
    fn linearity_and_translation() {
        let spec = GridSpec::new(2.0, 16).unwrap();
        let solver = FreeSpacePoisson::new(spec);
        let f = blob(spec, [0.2, 0.0, -0.1], 0.4, 1.0);
        let g = blob(spec, [-0.3, 0.25, 0.1], 0.3, 2.0);
        let comb: Vec<f64> = f.data.iter().zip(&g.data).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let pf = solver.potential(&f.data).unwrap();
        let pg = solver.potential(&g.data).unwrap();
        let pc = solver.potential(&comb).unwrap();
        let scale = pc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..spec.len() {
            assert!((pc[i] - (2.0 * pf[i] - 0.5 * pg[i])).abs() <= 1e-10 * scale);
        }
        // shift the right-hand side by one cell along axis 0
        let mut shifted = vec![0.0; spec.len()];
        for i in 0..spec.cells - 1 {
            for j in 0..spec.cells {
                for k in 0..spec.cells {
                    shifted[spec.index(i + 1, j, k)] = f.data[spec.index(i, j, k)];
                }
            }
        }
        let ps = solver.potential(&shifted).unwrap();
        for i in 2..spec.cells - 3 {
            for j in 2..spec.cells - 2 {
                for k in 2..spec.cells - 2 {
                    let a = ps[spec.index(i + 1, j, k)];
                    let b = pf[spec.index(i, j, k)];
                    assert!((a - b).abs() < 1e-8 * scale);
                }
            }
        }
    }

    #[test]
    fn inverts_discrete_laplacian() {
        let spec = GridSpec::new(1.0, 24).unwrap();
        let solver = FreeSpacePoisson::new(spec);
        let f = blob(spec, [0.0; 3], 0.3, 1.0);
        let phi = solver.potential(&f.data).unwrap();
        assert!(laplacian_residual(&spec, &phi, &f.data, 1) < 1e-10);
    }

    #[test]
    fn rhs_coefficients() {
        let spec = GridSpec::new(1.0, 8).unwrap();
        let mut p = FluidParams::default();
        p.strict_paper_regime = false;
        let n: Vec<f64> = (0..spec.len()).map(|i| (i % 7) as f64 * 0.1).collect();
        let f = rhs_from_densities(&n, &n, &spec, &p).unwrap();
        assert!(f.iter().all(|v| *v == 0.0));
        p.ion = crate::params::PolytropicLaw::new(3.0, 1.0 / 3.0);
        let zero = vec![0.0; spec.len()];
        let f = rhs_from_densities(&n, &zero, &spec, &p).unwrap();
        for (a, b) in f.iter().zip(&n) {
            assert!((a - b).abs() < 1e-14);
        }
        let mut neg = n.clone();
        neg[3] = -1.0;
        assert!(matches!(
            rhs_from_densities(&neg, &zero, &spec, &p),
            Err(Error::NegativeDensity { index: 3, .. })
        ));
    }

    #[test]
    fn gradient_bound_is_scale_invariant() {
        let spec = GridSpec::new(2.0, 16).unwrap();
        let solver = FreeSpacePoisson::new(spec);
        let f = blob(spec, [0.0; 3], 0.5, 1.0);
        let mut f2 = f.clone();
        f2.data.iter_mut().for_each(|v| *v *= 2.0);
        let r1 = gradient_bound_diagnostics(&solver, &f, 2.0).unwrap().ratio.unwrap();
        let r2 = gradient_bound_diagnostics(&solver, &f2, 2.0).unwrap().ratio.unwrap();
        assert!((r1 - r2).abs() < 1e-10 * r1);
        let zero = GridField::zeros(spec, 1);
        let rz = gradient_bound_diagnostics(&solver, &zero, 2.0).unwrap();
        assert!(rz.ratio.is_none() && rz.grad_norm == 0.0);
        assert!(gradient_bound_diagnostics(&solver, &f, 1.2).is_err());
    }
}
