//! Exact evaluation of the Burgers reference flow ∂_t û + (û·∇)û = 0,
//! û(0) = u⁰, by characteristics: û(t, x₀ + t u⁰(x₀)) = u⁰(x₀).

use nalgebra::{Complex, DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{derivative_vec, GridField, GridSpec, StencilOrder};

/// Smooth glue g(s) = e^{−1/s} for s > 0, else 0.
fn glue(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

fn glue_prime(s: f64) -> f64 {
    if s > 0.0 {
        glue(s) / (s * s)
    } else {
        0.0
    }
}

/// The cutoff F with F = 1 on [0, 1], F = 0 on [2, ∞).
pub fn bump(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let a = glue(2.0 - r);
        a / (a + glue(r - 1.0))
    }
}

pub fn bump_prime(r: f64) -> f64 {
    if r <= 1.0 || r >= 2.0 {
        return 0.0;
    }
    let (a, b) = (glue(2.0 - r), glue(r - 1.0));
    let (da, db) = (-glue_prime(2.0 - r), glue_prime(r - 1.0));
    (da * b - a * db) / ((a + b) * (a + b))
}

/// Catalog of compactly supported perturbation shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    /// F(|y|) y, a localized radial stretch.
    BumpRadial,
    /// F(|y|) (sin πy₂, sin πy₃, sin πy₁), a localized shear.
    BumpSine,
}

/// λ₂ f((x − c)/w) for a catalog profile f.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub profile: ProfileKind,
    pub amplitude: f64,
    #[serde(default = "one")]
    pub width: f64,
    #[serde(default)]
    pub center: [f64; 3],
}

fn one() -> f64 {
    1.0
}

impl Perturbation {
    fn scaled(&self, x: [f64; 3]) -> ([f64; 3], f64) {
        let y = [0, 1, 2].map(|i| (x[i] - self.center[i]) / self.width);
        let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
        (y, r)
    }

    pub fn value(&self, x: [f64; 3]) -> [f64; 3] {
        let (y, r) = self.scaled(x);
        let f = bump(r);
        if f == 0.0 {
            return [0.0; 3];
        }
        let pi = std::f64::consts::PI;
        let v = match self.profile {
            ProfileKind::BumpRadial => y,
            ProfileKind::BumpSine => [(pi * y[1]).sin(), (pi * y[2]).sin(), (pi * y[0]).sin()],
        };
        v.map(|c| self.amplitude * f * c)
    }

    /// Jacobian ∂_j f_i.
    pub fn jacobian(&self, x: [f64; 3]) -> Matrix3<f64> {
        let (y, r) = self.scaled(x);
        let mut jac = Matrix3::zeros();
        if r >= 2.0 {
            return jac;
        }
        let f = bump(r);
        let df = bump_prime(r);
        let grad_f = if r > 0.0 { y.map(|c| df * c / r) } else { [0.0; 3] };
        let pi = std::f64::consts::PI;
        match self.profile {
            ProfileKind::BumpRadial => {
                for i in 0..3 {
                    for j in 0..3 {
                        jac[(i, j)] = grad_f[j] * y[i] + if i == j { f } else { 0.0 };
                    }
                }
            }
            ProfileKind::BumpSine => {
                for i in 0..3 {
                    let k = (i + 1) % 3;
                    let s = (pi * y[k]).sin();
                    for j in 0..3 {
                        jac[(i, j)] = grad_f[j] * s;
                    }
                    jac[(i, k)] += f * pi * (pi * y[k]).cos();
                }
            }
        }
        jac * (self.amplitude / self.width)
    }
}

/// Initial velocity u⁰(x) = A x + b + λ₂ f(x).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurgersInitial {
    pub a: [[f64; 3]; 3],
    #[serde(default)]
    pub b: [f64; 3],
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
}

/// Result of inverting the characteristic map at one point.
#[derive(Clone, Copy, Debug)]
pub struct CharacteristicSolve {
    pub t: f64,
    pub x: [f64; 3],
    pub x0: [f64; 3],
    pub jac: Matrix3<f64>,
    pub newton_iters: usize,
    pub residual: f64,
}

pub const MAX_NEWTON_ITERS: usize = 50;

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

impl BurgersInitial {
    pub fn linear(a: [[f64; 3]; 3], b: [f64; 3]) -> Self {
        Self { a, b, perturbation: None }
    }

    /// u⁰(x) = κ x.
    pub fn scaled_identity(kappa: f64) -> Self {
        let mut a = [[0.0; 3]; 3];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = kappa;
        }
        Self::linear(a, [0.0; 3])
    }

    pub fn with_perturbation(mut self, p: Perturbation) -> Self {
        self.perturbation = Some(p);
        self
    }

    fn a_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.a[i][j])
    }

    pub fn u0(&self, x: [f64; 3]) -> [f64; 3] {
        let mut u = [0.0; 3];
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = self.a[i][0] * x[0] + self.a[i][1] * x[1] + self.a[i][2] * x[2] + self.b[i];
        }
        if let Some(p) = &self.perturbation {
            let f = p.value(x);
            for i in 0..3 {
                u[i] += f[i];
            }
        }
        u
    }

    pub fn grad_u0(&self, x: [f64; 3]) -> Matrix3<f64> {
        let mut g = self.a_matrix();
        if let Some(p) = &self.perturbation {
            g += p.jacobian(x);
        }
        g
    }

    /// Smallest spectrum distance of ∇u⁰ over the given points; errors if it
    /// falls below κ.
    pub fn check_kappa(&self, points: impl IntoIterator<Item = [f64; 3]>, kappa: f64) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for x in points {
            let m = self.grad_u0(x);
            let d = spectrum_distance(&DMatrix::from_fn(3, 3, |i, j| m[(i, j)]))?;
            if d < kappa {
                return Err(Error::KappaViolation {
                    found: d,
                    kappa,
                    location: x,
                });
            }
            worst = worst.min(d);
        }
        Ok(worst)
    }

    /// Foot point x₀ with x₀ + t u⁰(x₀) = x.
    pub fn eval_x0(&self, t: f64, x: [f64; 3]) -> Result<CharacteristicSolve> {
        let a = self.a_matrix();
        let m = Matrix3::identity() + a * t;
        let rhs = Vector3::new(x[0] - t * self.b[0], x[1] - t * self.b[1], x[2] - t * self.b[2]);
        let guess = m.try_inverse().map(|inv| inv * rhs).unwrap_or(rhs / (1.0 + t));
        match self.newton(t, x, [guess[0], guess[1], guess[2]]) {
            Ok(sol) => Ok(sol),
            Err(first) => self.continuation(t, x).map_err(|_| first),
        }
    }

    fn newton(&self, t: f64, x: [f64; 3], start: [f64; 3]) -> Result<CharacteristicSolve> {
        let tol = 1e-12 * (1.0 + norm3(x));
        let mut x0 = start;
        let mut residual = f64::INFINITY;
        for iter in 0..=MAX_NEWTON_ITERS {
            let u = self.u0(x0);
            let g = [0, 1, 2].map(|i| x0[i] + t * u[i] - x[i]);
            residual = norm3(g);
            let jac = Matrix3::identity() + self.grad_u0(x0) * t;
            if residual <= tol {
                return Ok(CharacteristicSolve {
                    t,
                    x,
                    x0,
                    jac,
                    newton_iters: iter,
                    residual,
                });
            }
            let step = jac.lu().solve(&Vector3::from(g)).ok_or(Error::SingularJacobian(x0))?;
            for i in 0..3 {
                x0[i] -= step[i];
            }
        }
        Err(Error::NewtonDivergence {
            t,
            x,
            iterations: MAX_NEWTON_ITERS,
            residual,
        })
    }

    /// Newton continuation in t from the identity at t = 0.
    fn continuation(&self, t: f64, x: [f64; 3]) -> Result<CharacteristicSolve> {
        let mut steps = 8;
        loop {
            let mut x0 = x;
            let mut last = None;
            for k in 1..=steps {
                let tk = t * k as f64 / steps as f64;
                match self.newton(tk, x, x0) {
                    Ok(sol) => {
                        x0 = sol.x0;
                        last = Some(sol);
                    }
                    Err(e) => {
                        last = None;
                        if steps >= 1024 {
                            return Err(e);
                        }
                        break;
                    }
                }
            }
            if let Some(sol) = last {
                return Ok(sol);
            }
            steps *= 2;
        }
    }

    pub fn eval_u_hat(&self, t: f64, x: [f64; 3]) -> Result<[f64; 3]> {
        let sol = self.eval_x0(t, x)?;
        Ok(self.u0(sol.x0))
    }

    pub fn eval_grad_u_hat(&self, t: f64, x: [f64; 3]) -> Result<Matrix3<f64>> {
        Ok(self.u_hat_and_grad(t, x)?.1)
    }

    /// û and ∇û = (I + t∇u⁰)^{−1} ∇u⁰ from one foot-point solve.
    pub fn u_hat_and_grad(&self, t: f64, x: [f64; 3]) -> Result<([f64; 3], Matrix3<f64>)> {
        let sol = self.eval_x0(t, x)?;
        let g0 = self.grad_u0(sol.x0);
        let grad = sol.jac.lu().solve(&g0).ok_or(Error::SingularJacobian(sol.x0))?;
        Ok((self.u0(sol.x0), grad))
    }

    /// K = (1+t)² ∇û − (1+t) I.
    pub fn k_field(&self, t: f64, x: [f64; 3]) -> Result<Matrix3<f64>> {
        let grad = self.eval_grad_u_hat(t, x)?;
        let s = 1.0 + t;
        Ok(grad * (s * s) - Matrix3::identity() * s)
    }

    /// û^N = û F(|x|/N).
    pub fn truncate_u_hat(&self, t: f64, x: [f64; 3], n: f64) -> Result<[f64; 3]> {
        let f = bump(norm3(x) / n);
        Ok(self.eval_u_hat(t, x)?.map(|c| c * f))
    }

    /// ∇û^N = F ∇û + û ⊗ ∇F.
    pub fn truncated_grad(&self, t: f64, x: [f64; 3], n: f64) -> Result<Matrix3<f64>> {
        let (u, grad) = self.u_hat_and_grad(t, x)?;
        let r = norm3(x);
        let f = bump(r / n);
        let mut out = grad * f;
        if r > 0.0 {
            let df = bump_prime(r / n) / n;
            for i in 0..3 {
                for j in 0..3 {
                    out[(i, j)] += u[i] * df * x[j] / r;
                }
            }
        }
        Ok(out)
    }

    /// Samples û and ∇û on every grid point at time t.
    pub fn sample(&self, spec: &GridSpec, t: f64) -> Result<crate::model::FlowSample> {
        let mut out = crate::model::FlowSample::zeros(*spec, t);
        let len = spec.len();
        for idx in 0..len {
            let (u, g) = self.u_hat_and_grad(t, spec.point(idx))?;
            for c in 0..3 {
                out.u.data[c * len + idx] = u[c];
            }
            for r in 0..3 {
                for c in 0..3 {
                    out.grad.data[(3 * r + c) * len + idx] = g[(r, c)];
                }
            }
        }
        Ok(out)
    }
}

/// x₀ + t u⁰(x₀).
pub fn flow_forward(x0: [f64; 3], t: f64, u0: &BurgersInitial) -> [f64; 3] {
    let u = u0.u0(x0);
    [0, 1, 2].map(|i| x0[i] + t * u[i])
}

/// min over eigenvalues λ = a + ib of the distance from λ to (−∞, 0].
pub fn spectrum_distance(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("spectrum distance needs a finite square matrix".into()));
    }
    let eps = f64::EPSILON * m.norm().max(1.0);
    let eig: Vec<Complex<f64>> = match m.clone().try_schur(eps, 10_000) {
        Some(schur) => schur.complex_eigenvalues().iter().copied().collect(),
        // QR stalls on nearly repeated eigenvalues
        None => polynomial_eigenvalues(m).ok_or(Error::Eigen(m.nrows()))?,
    };
    Ok(eig
        .iter()
        .map(|l| if l.re > 0.0 { l.norm() } else { l.im.abs() })
        .fold(f64::INFINITY, f64::min))
}

/// Roots of the characteristic polynomial for sizes 1 to 3.
fn polynomial_eigenvalues(m: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    let c = |v: f64| Complex::new(v, 0.0);
    match m.nrows() {
        1 => Some(vec![c(m[(0, 0)])]),
        2 => {
            let (tr, det) = (m.trace(), m.determinant());
            let disc = c(tr * tr - 4.0 * det).sqrt();
            Some(vec![(c(tr) + disc) / 2.0, (c(tr) - disc) / 2.0])
        }
        3 => {
            // depressed cubic of m − (tr/3) I
            let shift = m.trace() / 3.0;
            let b = m - DMatrix::identity(3, 3) * shift;
            let p = -0.5 * (&b * &b).trace();
            let q = -b.determinant();
            // λ³ + pλ + q = 0 by Cardano
            let d = (c(q * q / 4.0 + p * p * p / 27.0)).sqrt();
            let mut u = (c(-q / 2.0) + d).powf(1.0 / 3.0);
            if u.norm() < 1e-300 {
                u = (c(-q / 2.0) - d).powf(1.0 / 3.0);
            }
            let w = Complex::new(-0.5, 0.75f64.sqrt());
            let roots = (0..3)
                .map(|k| {
                    let uk = u * w.powu(k);
                    let vk = if uk.norm() > 1e-300 { c(-p / 3.0) / uk } else { c(0.0) };
                    uk + vk + c(shift)
                })
                .collect();
            Some(roots)
        }
        _ => None,
    }
}

/// Row of the reference-flow decay table.
#[derive(Clone, Debug, Serialize)]
pub struct DecayRow {
    pub t: f64,
    /// |∇^σ û|₂ for each requested σ.
    pub hdot: Vec<f64>,
    pub hess_inf: f64,
}

/// |∇^σ û|₂ and |∇²û|_∞ on a grid that moves with the flow: at time t the
/// box is scaled by (1+t), which keeps the perturbed region resolved while
/// û is linear (and ∇²û vanishes) outside it. σ ≥ 2 norms are computed by
/// differencing the exact ∇û with the fourth-order stencils.
pub fn decay_norms_u_hat(u0: &BurgersInitial, t_list: &[f64], sigma_list: &[usize], grid: &GridSpec) -> Result<Vec<DecayRow>> {
    let mut rows = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let spec = GridSpec::new(grid.half_length * (1.0 + t), grid.cells)?;
        let flow = u0.sample(&spec, t)?;
        let vol = spec.cell_volume();
        let len = spec.len();
        let mut hdot = Vec::with_capacity(sigma_list.len());
        for &sigma in sigma_list {
            if sigma == 0 {
                return Err(Error::InvalidParameter("sigma must be at least 1".into()));
            }
            // start from the nine entries of ∇û and differentiate σ−1 more times
            let mut current: Vec<Vec<f64>> = (0..9).map(|c| flow.grad.component(c).to_vec()).collect();
            for _ in 1..sigma {
                let mut next = Vec::with_capacity(current.len() * 3);
                for f in &current {
                    for axis in 0..3 {
                        next.push(derivative_vec(&spec, f, axis, StencilOrder::Fourth));
                    }
                }
                current = next;
            }
            let sum: f64 = current.iter().flat_map(|f| f.iter().map(|v| v * v)).sum();
            hdot.push((sum * vol).sqrt());
        }
        let mut hess2 = vec![0.0; len];
        for c in 0..9 {
            for axis in 0..3 {
                let d = derivative_vec(&spec, flow.grad.component(c), axis, StencilOrder::Fourth);
                for (h, v) in hess2.iter_mut().zip(&d) {
                    *h += v * v;
                }
            }
        }
        let hess_inf = hess2.iter().fold(0.0f64, |m, v| m.max(*v)).sqrt();
        rows.push(DecayRow { t, hdot, hess_inf });
    }
    Ok(rows)
}

/// Scalar field |K| (Frobenius) on a grid, and its maximum.
pub fn k_field_max(u0: &BurgersInitial, spec: &GridSpec, t: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for x in spec.points() {
        worst = worst.max(u0.k_field(t, x)?.norm());
    }
    Ok(worst)
}

/// Evaluates û componentwise on a grid (helper for examples and studies).
pub fn sample_u_hat(u0: &BurgersInitial, spec: &GridSpec, t: f64) -> Result<GridField> {
    let mut out = GridField::zeros(*spec, 3);
    let len = spec.len();
    for idx in 0..len {
        let u = u0.eval_u_hat(t, spec.point(idx))?;
        for c in 0..3 {
            out.data[c * len + idx] = u[c];
        }
    }
    Ok(out)
}
