//! Symmetrized unknowns W_ν = (n_ν, V_ν) with V_ν = ε^{−β_ν} w_ν, the
//! ρ ↔ n change of variables, flux matrices and pointwise source terms.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec, DIM};
use crate::params::{FluidParams, PolytropicLaw, Species};

/// n = sqrt(4Aγ/(γ−1)²) ρ^{(γ−1)/2}.
pub fn rho_to_n(rho: &GridField, law: &PolytropicLaw) -> Result<GridField> {
    let factor = law.sound_speed_factor();
    let exponent = law.half_gamma_minus_one();
    map_nonnegative(rho, |r| factor * r.powf(exponent))
}

/// ρ = (n sqrt((γ−1)²/(4Aγ)))^{2/(γ−1)}.
pub fn n_to_rho(n: &GridField, law: &PolytropicLaw) -> Result<GridField> {
    let inv = 1.0 / law.sound_speed_factor();
    let exponent = law.density_exponent();
    map_nonnegative(n, |v| (v * inv).powf(exponent))
}

fn map_nonnegative(f: &GridField, op: impl Fn(f64) -> f64) -> Result<GridField> {
    let mut out = f.clone();
    for (idx, v) in out.data.iter_mut().enumerate() {
        if *v < 0.0 || v.is_nan() {
            let cell = idx % f.spec.len();
            return Err(Error::NegativeDensity {
                index: cell,
                location: f.spec.point(cell),
                value: *v,
            });
        }
        *v = op(*v);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityKind {
    /// λ₁ F(|x − c|/w)², compactly supported in the ball of radius 2w.
    BumpSquared,
    /// λ₁ e^{−|x − c|²/w²}; not compactly supported.
    Gaussian,
    /// Prescribed in the sound-speed variable: n⁰ = λ₁ F(1 + |x − c|/w),
    /// supported in the ball of radius w and smooth across its whole width.
    SoundSpeedBump,
}

/// Initial mass density ρ⁰ of one species.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityProfile {
    pub kind: DensityKind,
    pub amplitude: f64,
    pub width: f64,
    #[serde(default)]
    pub center: [f64; 3],
}

impl DensityProfile {
    pub fn bump(amplitude: f64, width: f64) -> Self {
        Self {
            kind: DensityKind::BumpSquared,
            amplitude,
            width,
            center: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) || !(self.width > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "density profile needs amplitude >= 0 and width > 0, got {} and {}",
                self.amplitude, self.width
            )));
        }
        Ok(())
    }

    fn radius(&self, x: [f64; 3]) -> f64 {
        (0..3).map(|i| (x[i] - self.center[i]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn rho(&self, x: [f64; 3], law: &PolytropicLaw) -> f64 {
        let r = self.radius(x);
        match self.kind {
            DensityKind::BumpSquared => self.amplitude * crate::burgers::bump(r / self.width).powi(2),
            DensityKind::Gaussian => self.amplitude * (-(r * r) / (self.width * self.width)).exp(),
            DensityKind::SoundSpeedBump => (self.n(x, law) / law.sound_speed_factor()).powf(law.density_exponent()),
        }
    }

    /// n⁰ = sqrt(4Aγ/(γ−1)²) (ρ⁰)^{(γ−1)/2}.
    pub fn n(&self, x: [f64; 3], law: &PolytropicLaw) -> f64 {
        match self.kind {
            DensityKind::SoundSpeedBump => self.amplitude * crate::burgers::bump(1.0 + self.radius(x) / self.width),
            _ => law.sound_speed_factor() * self.rho(x, law).powf(law.half_gamma_minus_one()),
        }
    }

    /// Radius of a ball about the origin containing the support.
    pub fn support_radius(&self) -> Option<f64> {
        match self.kind {
            DensityKind::BumpSquared => Some(self.radius([0.0; 3]) + 2.0 * self.width),
            DensityKind::SoundSpeedBump => Some(self.radius([0.0; 3]) + self.width),
            DensityKind::Gaussian => None,
        }
    }

    pub fn sample_n(&self, spec: &GridSpec, law: &PolytropicLaw) -> GridField {
        GridField::from_fn(*spec, |x| self.n(x, law))
    }
}

/// Flux matrix A^j_ν at one point. `w` holds (n, V¹, V², V³); `axis` is the
/// zero-based coordinate direction.
pub fn assemble_flux_matrix(w: [f64; 4], u_hat: [f64; 3], params: &FluidParams, species: Species, axis: usize) -> Matrix4<f64> {
    assert!(axis < DIM, "axis {axis} out of range");
    let eb = params.eps_beta(species);
    let speed = eb * w[1 + axis] + u_hat[axis];
    let off = eb * params.law(species).half_gamma_minus_one() * w[0];
    let mut a = Matrix4::from_diagonal_element(speed);
    a[(0, 1 + axis)] = off;
    a[(1 + axis, 0)] = off;
    a
}

/// Closed-form eigenvalues of [`assemble_flux_matrix`], ascending.
pub fn flux_eigenvalues(w: [f64; 4], u_hat: [f64; 3], params: &FluidParams, species: Species, axis: usize) -> [f64; 4] {
    let eb = params.eps_beta(species);
    let speed = eb * w[1 + axis] + u_hat[axis];
    let c = (eb * params.law(species).half_gamma_minus_one() * w[0]).abs();
    [speed - c, speed, speed, speed + c]
}

/// Reference flow data of one species sampled on the grid: û (3 components)
/// and ∇û (9 components, entry `3*r + c` is ∂_c û^r).
#[derive(Clone, Debug)]
pub struct FlowSample {
    pub t: f64,
    pub u: GridField,
    pub grad: GridField,
}

impl FlowSample {
    pub fn zeros(spec: GridSpec, t: f64) -> Self {
        Self {
            t,
            u: GridField::zeros(spec, 3),
            grad: GridField::zeros(spec, 9),
        }
    }

    /// Rebuilds ∇û from the split ∇û = I/(1+t) + K/(1+t)².
    pub fn from_k_split(t: f64, u: GridField, k: &GridField) -> Self {
        let mut grad = k.clone();
        let n = k.spec.len();
        let s = 1.0 / (1.0 + t);
        for r in 0..3 {
            for c in 0..3 {
                let comp = &mut grad.data[(3 * r + c) * n..(3 * r + c + 1) * n];
                for v in comp.iter_mut() {
                    *v *= s * s;
                    if r == c {
                        *v += s;
                    }
                }
            }
        }
        Self { t, u, grad }
    }

    pub fn divergence(&self, idx: usize) -> f64 {
        let n = self.u.spec.len();
        self.grad.data[idx] + self.grad.data[4 * n + idx] + self.grad.data[8 * n + idx]
    }
}

/// Symmetrized state of both species at one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmState {
    pub t: f64,
    pub n_i: GridField,
    pub n_e: GridField,
    pub v_i: GridField,
    pub v_e: GridField,
    pub support_radius_i: f64,
    pub support_radius_e: f64,
}

impl SymmState {
    pub fn vacuum(spec: GridSpec, t: f64) -> Self {
        Self {
            t,
            n_i: GridField::zeros(spec, 1),
            n_e: GridField::zeros(spec, 1),
            v_i: GridField::zeros(spec, 3),
            v_e: GridField::zeros(spec, 3),
            support_radius_i: 0.0,
            support_radius_e: 0.0,
        }
    }

    /// State with given densities at rest (w = 0).
    pub fn at_rest(n_i: GridField, n_e: GridField, t: f64) -> Result<Self> {
        if !n_i.spec.same_as(&n_e.spec) || n_i.components != 1 || n_e.components != 1 {
            return Err(Error::GridMismatch("densities must be scalar fields on one grid".into()));
        }
        let spec = n_i.spec;
        let mut s = Self::vacuum(spec, t);
        s.support_radius_i = crate::poisson::support_radius(&spec, &n_i.data, 0.0);
        s.support_radius_e = crate::poisson::support_radius(&spec, &n_e.data, 0.0);
        s.n_i = n_i;
        s.n_e = n_e;
        Ok(s)
    }

    pub fn spec(&self) -> GridSpec {
        self.n_i.spec
    }

    pub fn n(&self, species: Species) -> &GridField {
        match species {
            Species::Ion => &self.n_i,
            Species::Electron => &self.n_e,
        }
    }

    pub fn v(&self, species: Species) -> &GridField {
        match species {
            Species::Ion => &self.v_i,
            Species::Electron => &self.v_e,
        }
    }

    pub fn n_mut(&mut self, species: Species) -> &mut GridField {
        match species {
            Species::Ion => &mut self.n_i,
            Species::Electron => &mut self.n_e,
        }
    }

    pub fn v_mut(&mut self, species: Species) -> &mut GridField {
        match species {
            Species::Ion => &mut self.v_i,
            Species::Electron => &mut self.v_e,
        }
    }

    pub fn support_radius(&self, species: Species) -> f64 {
        match species {
            Species::Ion => self.support_radius_i,
            Species::Electron => self.support_radius_e,
        }
    }

    pub fn set_support_radius(&mut self, species: Species, r: f64) {
        match species {
            Species::Ion => self.support_radius_i = r,
            Species::Electron => self.support_radius_e = r,
        }
    }

    fn blocks(&self) -> [&GridField; 4] {
        [&self.n_i, &self.n_e, &self.v_i, &self.v_e]
    }

    fn blocks_mut(&mut self) -> [&mut GridField; 4] {
        [&mut self.n_i, &mut self.n_e, &mut self.v_i, &mut self.v_e]
    }

    /// self += a · other (fields only).
    pub fn add_scaled(&mut self, a: f64, other: &SymmState) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in dst.data.iter_mut().zip(&src.data) {
                *x += a * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|f| f.is_finite())
    }

    /// Name of the first block holding a non-finite sample.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        ["n_i", "n_e", "v_i", "v_e"]
            .into_iter()
            .zip(self.blocks())
            .find(|(_, f)| !f.is_finite())
            .map(|(name, _)| name)
    }

    /// Largest difference over all fields.
    pub fn max_diff(&self, other: &SymmState) -> f64 {
        self.blocks()
            .iter()
            .zip(other.blocks())
            .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Flat little-endian-ready view of the four blocks in storage order.
    pub fn field_blocks(&self) -> [(&'static str, &GridField); 4] {
        [("n_i", &self.n_i), ("n_e", &self.n_e), ("v_i", &self.v_i), ("v_e", &self.v_e)]
    }

    pub fn field_blocks_mut(&mut self) -> [&mut GridField; 4] {
        self.blocks_mut()
    }
}

/// Adds Q¹(∇φ) − Q²(W; ∇û) of one species into `out_n` and `out_v`.
pub fn add_species_sources(
    species: Species,
    n: &[f64],
    v: &GridField,
    flow: &FlowSample,
    grad_phi: &GridField,
    params: &FluidParams,
    out_n: &mut [f64],
    out_v: &mut [f64],
) {
    let len = n.len();
    let half = params.law(species).half_gamma_minus_one();
    let force = params.eps_beta(species) * species.charge();
    let g = &flow.grad.data;
    for idx in 0..len {
        out_n[idx] -= half * n[idx] * flow.divergence(idx);
        let vv = [v.data[idx], v.data[len + idx], v.data[2 * len + idx]];
        for k in 0..3 {
            let conv = g[(3 * k) * len + idx] * vv[0] + g[(3 * k + 1) * len + idx] * vv[1] + g[(3 * k + 2) * len + idx] * vv[2];
            out_v[k * len + idx] += force * grad_phi.data[k * len + idx] - conv;
        }
    }
}

/// Source terms of both species as a state-shaped increment.
pub fn assemble_sources(state: &SymmState, flow_i: &FlowSample, flow_e: &FlowSample, grad_phi: &GridField, params: &FluidParams) -> Result<SymmState> {
    let spec = state.spec();
    for f in [&flow_i.u, &flow_e.u, grad_phi] {
        if !f.spec.same_as(&spec) {
            return Err(Error::GridMismatch("source inputs live on different grids".into()));
        }
    }
    let mut out = SymmState::vacuum(spec, state.t);
    for (species, flow) in [(Species::Ion, flow_i), (Species::Electron, flow_e)] {
        let mut dn = vec![0.0; spec.len()];
        let mut dv = vec![0.0; 3 * spec.len()];
        add_species_sources(species, &state.n(species).data, state.v(species), flow, grad_phi, params, &mut dn, &mut dv);
        out.n_mut(species).data = dn;
        out.v_mut(species).data = dv;
    }
    Ok(out)
}
