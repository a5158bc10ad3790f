//! The infinity-ion-mass limit: ions transported by the reference flow in
//! closed form, electrons solving a unipolar Euler–Poisson system with the
//! ion density as a time-dependent doping profile.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use crate::burgers::BurgersInitial;
use crate::error::{Error, Result};
use crate::grid::{derivative_vec, GridField, GridSpec};
use crate::model::{DensityProfile, SymmState};
use crate::params::{FluidParams, PolytropicLaw, Species};
use crate::poisson::density_power;
use crate::solver::{BipolarSolver, IonBackground, RunOutput, SolverConfig};

/// n̄_i(t, x) = n_i⁰(x₀) det(I + t∇u⁰(x₀))^{−(γ−1)/2}, x₀ the foot of x.
pub fn ion_density_exact(t: f64, x: [f64; 3], n_i0: impl Fn([f64; 3]) -> f64, u0: &BurgersInitial, law: &PolytropicLaw) -> Result<f64> {
    let sol = u0.eval_x0(t, x)?;
    let det = sol.jac.determinant();
    if !(det > 0.0) {
        return Err(Error::SingularJacobian(sol.x0));
    }
    let n0 = n_i0(sol.x0);
    if n0 == 0.0 {
        return Ok(0.0);
    }
    Ok(n0 * det.powf(-law.half_gamma_minus_one()))
}

/// Exact ion density on a grid, cached per time level.
pub struct ExactIonDensity {
    pub profile: DensityProfile,
    pub flow: BurgersInitial,
    pub law: PolytropicLaw,
    cache: Mutex<VecDeque<(f64, Arc<Vec<f64>>)>>,
}

impl ExactIonDensity {
    pub fn new(profile: DensityProfile, flow: BurgersInitial, law: PolytropicLaw) -> Self {
        Self {
            profile,
            flow,
            law,
            cache: Mutex::new(VecDeque::new()),
        }
    }

    pub fn sample(&self, spec: &GridSpec, t: f64) -> Result<Arc<Vec<f64>>> {
        {
            let cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
            if let Some((_, v)) = cache.iter().find(|(ct, v)| *ct == t && v.len() == spec.len()) {
                return Ok(v.clone());
            }
        }
        let reach = self.profile.support_radius();
        let mut out = vec![0.0; spec.len()];
        for (idx, x) in spec.points().enumerate() {
            // the foot point of x lies near (I + tA)^{-1} x; skip cells that
            // are clearly outside the transported support
            if let Some(r) = reach {
                let sol = self.flow.eval_x0(t, x)?;
                let d: f64 = (0..3).map(|i| (sol.x0[i] - self.profile.center[i]).powi(2)).sum::<f64>().sqrt();
                if d >= r {
                    continue;
                }
            }
            out[idx] = ion_density_exact(t, x, |y| self.profile.n(y, &self.law), &self.flow, &self.law)?;
        }
        let out = Arc::new(out);
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        cache.push_back((t, out.clone()));
        while cache.len() > 4 {
            cache.pop_front();
        }
        Ok(out)
    }
}

impl IonBackground for ExactIonDensity {
    fn density(&self, spec: &GridSpec, t: f64) -> Result<Vec<f64>> {
        Ok(self.sample(spec, t)?.as_ref().clone())
    }
}

/// Doping profile b(t, x) = C_i n̄_i(t, x)^{2/(γ_i−1)}.
pub struct DopingProfile {
    pub ions: ExactIonDensity,
    pub coeff: f64,
}

impl DopingProfile {
    pub fn new(profile: DensityProfile, flow: BurgersInitial, params: &FluidParams) -> Self {
        Self {
            ions: ExactIonDensity::new(profile, flow, params.ion),
            coeff: params.poisson_coeff(Species::Ion),
        }
    }

    pub fn evaluate(&self, spec: &GridSpec, t: f64) -> Result<GridField> {
        let n = self.ions.sample(spec, t)?;
        let p = self.ions.law.density_exponent();
        GridField::scalar(*spec, n.iter().map(|&v| self.coeff * density_power(v, p)).collect())
    }
}

/// Ion background that is identically zero.
pub struct NoIons;

impl IonBackground for NoIons {
    fn density(&self, spec: &GridSpec, _t: f64) -> Result<Vec<f64>> {
        Ok(vec![0.0; spec.len()])
    }
}

/// Integrates the limit electron system with the bipolar kernel, the ion
/// channel frozen to the exact transported density.
pub fn solve_electron_limit(
    spec: GridSpec,
    params: &FluidParams,
    config: SolverConfig,
    n_e0: GridField,
    ion_flow: BurgersInitial,
    electron_flow: BurgersInitial,
    background: Box<dyn IonBackground>,
) -> Result<RunOutput> {
    let solver = BipolarSolver::new(spec, params.clone(), config, ion_flow, electron_flow)?.with_ion_background(background);
    let n_i = GridField::zeros(spec, 1);
    let state = SymmState::at_rest(n_i, n_e0, 0.0)?;
    solver.run(state)
}

/// Relative L² residuals of the recombined electron equations
/// ∂_t n̄ + ū·∇n̄ + (γ−1)/2 n̄ div ū = 0 and
/// ∂_t ū + (ū·∇)ū + (γ−1)/2 n̄ ∇n̄ = −∇φ̄, with ū = w̄ + û, the time
/// derivatives taken from the semi-discrete right-hand side and ∂_t û =
/// −(û·∇)û exactly.
pub fn recombined_residual(solver: &BipolarSolver, state: &SymmState) -> Result<(f64, f64)> {
    let spec = *solver.spec();
    let len = spec.len();
    let params = &solver.params;
    let eval = solver.rhs_semidiscrete(state)?;
    let flow = solver.flow(Species::Electron).sample(&spec, state.t)?;
    let half = params.electron.half_gamma_minus_one();
    let n = &state.n_e.data;
    let eb = params.eps_beta(Species::Electron);
    let ubar: Vec<f64> = (0..3 * len).map(|i| eb * state.v_e.data[i] + flow.u.data[i]).collect();
    let dn: Vec<Vec<f64>> = (0..3).map(|a| derivative_vec(&spec, n, a, solver.config.stencil)).collect();
    let du: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|k| (0..3).map(|a| derivative_vec(&spec, &ubar[k * len..(k + 1) * len], a, solver.config.stencil)).collect())
        .collect();
    let (mut r1, mut s1, mut r2, mut s2) = (0.0, 0.0, 0.0, 0.0);
    for idx in 0..len {
        let u = [ubar[idx], ubar[len + idx], ubar[2 * len + idx]];
        let div: f64 = (0..3).map(|a| du[a][a][idx]).sum();
        let adv: f64 = (0..3).map(|a| u[a] * dn[a][idx]).sum();
        let dt_n = eval.rate.n_e.data[idx];
        let res = dt_n + adv + half * n[idx] * div;
        r1 += res * res;
        s1 += dt_n * dt_n + adv * adv;
        for k in 0..3 {
            let uh = [flow.u.data[idx], flow.u.data[len + idx], flow.u.data[2 * len + idx]];
            let dt_uhat: f64 = -(0..3).map(|a| uh[a] * flow.grad.data[(3 * k + a) * len + idx]).sum::<f64>();
            let dt_u = eb * eval.rate.v_e.data[k * len + idx] + dt_uhat;
            let conv: f64 = (0..3).map(|a| u[a] * du[k][a][idx]).sum();
            let force = eval.grad_phi.data[k * len + idx];
            let pressure = half * n[idx] * dn[k][idx];
            let res = dt_u + conv + pressure + force;
            r2 += res * res;
            s2 += dt_u * dt_u + conv * conv;
        }
    }
    let rel = |r: f64, s: f64| if s > 0.0 { (r / s).sqrt() } else { r.sqrt() };
    Ok((rel(r1, s1), rel(r2, s2)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_flow_decay_factor() {
        let law = PolytropicLaw::unit_normalized(4.0 / 3.0);
        let u0 = BurgersInitial::scaled_identity(1.0);
        let n0 = |y: [f64; 3]| 1.0 + y[0] * y[0];
        let t = 1.5;
        let x = [0.5, 0.2, -0.1];
        let got = ion_density_exact(t, x, n0, &u0, &law).unwrap();
        let x0 = x.map(|c| c / (1.0 + t));
        let expect = n0(x0) * (1.0 + t).powf(-3.0 * (law.gamma - 1.0) / 2.0);
        assert!((got - expect).abs() < 1e-14);
        assert!((ion_density_exact(0.0, x, n0, &u0, &law).unwrap() - n0(x)).abs() < 1e-15);
    }

    #[test]
    fn cached_sample_skips_outside_support() {
        let p = FluidParams::default();
        let spec = GridSpec::new(2.0, 12).unwrap();
        let ions = ExactIonDensity::new(DensityProfile::bump(0.01, 0.3), BurgersInitial::scaled_identity(0.5), p.ion);
        let a = ions.sample(&spec, 0.5).unwrap();
        let b = ions.sample(&spec, 0.5).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let direct: Vec<f64> = spec
            .points()
            .map(|x| ion_density_exact(0.5, x, |y| ions.profile.n(y, &p.ion), &ions.flow, &p.ion).unwrap())
            .collect();
        for (u, v) in a.iter().zip(&direct) {
            assert!((u - v).abs() < 1e-15);
        }
    }
}
