//! Method-of-lines integration of the symmetrized bipolar system with the
//! exact reference flow, a Poisson solve per stage and classical RK4.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::burgers::{bump, BurgersInitial};
use crate::diagnostics::{measure_species, weighted_functionals, HdotMethod, NormRow, WeightedRow};
use crate::error::{Error, Result};
use crate::grid::{derivative, laplacian_7pt, GridField, GridSpec, StencilOrder};
use crate::model::{add_species_sources, FlowSample, SymmState};
use crate::params::{FluidParams, Species};
use crate::poisson::{density_power, rhs_from_densities, support_radius, FreeSpacePoisson};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    pub t_final: f64,
    #[serde(default)]
    pub artificial_viscosity: f64,
    #[serde(default)]
    pub stencil: StencilOrder,
    /// Radius N of the cutoff F(|x|/N) applied to û in the convection terms.
    #[serde(default)]
    pub truncation: Option<f64>,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Fixed step size; must still satisfy the CFL bound.
    #[serde(default)]
    pub fixed_dt: Option<f64>,
    /// An undershoot below −tolerance·max(n) aborts the run.
    #[serde(default = "default_undershoot")]
    pub undershoot_tolerance: f64,
    /// Reset negative density samples to zero after each step. Otherwise
    /// they stay in the state and only their positive part enters ρ.
    /// Clipping is a projection applied once per step, which caps the
    /// temporal order at one.
    #[serde(default)]
    pub clip_negative: bool,
    /// Relative density level that defines the measured support.
    #[serde(default = "default_support_threshold")]
    pub support_threshold: f64,
    #[serde(default)]
    pub hdot_method: HdotMethod,
    #[serde(default = "default_true")]
    pub record_norms: bool,
}

fn default_cfl() -> f64 {
    0.4
}
fn default_record_every() -> usize {
    1
}
fn default_undershoot() -> f64 {
    1e-2
}
fn default_support_threshold() -> f64 {
    1e-4
}
fn default_true() -> bool {
    true
}

impl SolverConfig {
    pub fn new(t_final: f64) -> Self {
        Self {
            cfl: default_cfl(),
            t_final,
            artificial_viscosity: 0.0,
            stencil: StencilOrder::Fourth,
            truncation: None,
            record_every: 1,
            fixed_dt: None,
            undershoot_tolerance: default_undershoot(),
            clip_negative: false,
            support_threshold: default_support_threshold(),
            hdot_method: HdotMethod::Stencil,
            record_norms: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(Error::InvalidParameter(format!("cfl = {} must lie in (0, 1)", self.cfl)));
        }
        if !(self.artificial_viscosity >= 0.0) {
            return Err(Error::InvalidParameter("artificial viscosity must be nonnegative".into()));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(Error::InvalidParameter(format!("t_final = {} must be finite and nonnegative", self.t_final)));
        }
        if let Some(n) = self.truncation {
            if !(n >= 1.0) {
                return Err(Error::InvalidParameter(format!("truncation radius N = {n} must be at least 1")));
            }
        }
        if let Some(dt) = self.fixed_dt {
            if !(dt > 0.0) {
                return Err(Error::InvalidParameter("fixed_dt must be positive".into()));
            }
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be at least 1".into()));
        }
        if !(self.undershoot_tolerance >= 0.0) || !(self.support_threshold >= 0.0) {
            return Err(Error::InvalidParameter("tolerances must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Ion density supplied from outside instead of being evolved.
pub trait IonBackground: Send + Sync {
    fn density(&self, spec: &GridSpec, t: f64) -> Result<Vec<f64>>;
}

/// Per-species diagnostics at one record time.
#[derive(Clone, Debug, Serialize)]
pub struct SpeciesRecord {
    pub norms: NormRow,
    pub weighted: WeightedRow,
    pub support_radius: f64,
    pub support_bound: f64,
    pub mass: f64,
    pub negative_cells: usize,
    pub min_density: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct RunRecord {
    pub times: Vec<f64>,
    pub steps: Vec<usize>,
    pub dt: Vec<f64>,
    pub max_speed: Vec<f64>,
    pub ion: Vec<SpeciesRecord>,
    pub electron: Vec<SpeciesRecord>,
}

impl RunRecord {
    pub fn species(&self, species: Species) -> &[SpeciesRecord] {
        match species {
            Species::Ion => &self.ion,
            Species::Electron => &self.electron,
        }
    }

    fn species_mut(&mut self, species: Species) -> &mut Vec<SpeciesRecord> {
        match species {
            Species::Ion => &mut self.ion,
            Species::Electron => &mut self.electron,
        }
    }
}

pub struct RunOutput {
    pub record: RunRecord,
    pub state: SymmState,
    pub grad_phi: GridField,
    pub steps: usize,
    /// The error that stopped the run early, if any.
    pub error: Option<Error>,
}

impl RunOutput {
    pub fn into_result(self) -> Result<RunOutput> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

struct CachedFlows {
    t: f64,
    ion: Arc<FlowSample>,
    electron: Arc<FlowSample>,
    grad_sup: [f64; 2],
}

/// Result of one right-hand-side evaluation.
pub struct RhsEval {
    pub rate: SymmState,
    pub grad_phi: GridField,
}

pub struct BipolarSolver {
    pub params: FluidParams,
    pub config: SolverConfig,
    spec: GridSpec,
    poisson: FreeSpacePoisson,
    flows: [BurgersInitial; 2],
    cutoff: Option<Vec<f64>>,
    cache: Mutex<VecDeque<Arc<CachedFlows>>>,
    ion_background: Option<Box<dyn IonBackground>>,
    /// Per-species negative-sample counts of the last step.
    last_negative: Mutex<[(usize, f64); 2]>,
}

const CACHE_SLOTS: usize = 4;

impl BipolarSolver {
    pub fn new(spec: GridSpec, params: FluidParams, config: SolverConfig, ion_flow: BurgersInitial, electron_flow: BurgersInitial) -> Result<Self> {
        spec.validate()?;
        params.validate()?;
        config.validate()?;
        if params.dim != 3 {
            return Err(Error::Unsupported(format!("the grid solver is three-dimensional, got d = {}", params.dim)));
        }
        let cutoff = config
            .truncation
            .map(|n| spec.points().map(|x| bump((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() / n)).collect());
        Ok(Self {
            params,
            config,
            spec,
            poisson: FreeSpacePoisson::new(spec),
            flows: [ion_flow, electron_flow],
            cutoff,
            cache: Mutex::new(VecDeque::new()),
            ion_background: None,
            last_negative: Mutex::new([(0, 0.0); 2]),
        })
    }

    /// Replaces the ion dynamics by a prescribed density (limit runs).
    pub fn with_ion_background(mut self, bg: Box<dyn IonBackground>) -> Self {
        self.ion_background = Some(bg);
        self
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn flow(&self, species: Species) -> &BurgersInitial {
        match species {
            Species::Ion => &self.flows[0],
            Species::Electron => &self.flows[1],
        }
    }

    fn evolves(&self, species: Species) -> bool {
        !(species == Species::Ion && self.ion_background.is_some())
    }

    fn flows_at(&self, t: f64) -> Result<Arc<CachedFlows>> {
        {
            let cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(hit) = cache.iter().find(|c| c.t == t) {
                return Ok(hit.clone());
            }
        }
        let ion = self.flows[0].sample(&self.spec, t)?;
        let electron = self.flows[1].sample(&self.spec, t)?;
        let sup = |f: &FlowSample| {
            let n = self.spec.len();
            (0..n)
                .map(|i| (0..9).map(|c| f.grad.data[c * n + i].powi(2)).sum::<f64>())
                .fold(0.0, f64::max)
                .sqrt()
        };
        let entry = Arc::new(CachedFlows {
            t,
            grad_sup: [sup(&ion), sup(&electron)],
            ion: Arc::new(ion),
            electron: Arc::new(electron),
        });
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        cache.push_back(entry.clone());
        while cache.len() > CACHE_SLOTS {
            cache.pop_front();
        }
        Ok(entry)
    }

    fn flow_sample<'a>(flows: &'a CachedFlows, species: Species) -> &'a FlowSample {
        match species {
            Species::Ion => &flows.ion,
            Species::Electron => &flows.electron,
        }
    }

    /// Ion density used by the Poisson solve at time t.
    fn ion_density(&self, state: &SymmState) -> Result<Vec<f64>> {
        match &self.ion_background {
            Some(bg) => bg.density(&self.spec, state.t),
            None => Ok(state.n_i.data.iter().map(|v| v.max(0.0)).collect()),
        }
    }

    /// Poisson solve for the current densities.
    pub fn field(&self, state: &SymmState) -> Result<crate::poisson::PoissonSolution> {
        let n_i = self.ion_density(state)?;
        let n_e: Vec<f64> = state.n_e.data.iter().map(|v| v.max(0.0)).collect();
        let f = rhs_from_densities(&n_i, &n_e, &self.spec, &self.params)?;
        self.poisson.solve_rhs(&f)
    }

    /// −Σ_j A^j ∂_j W + Q¹(∇φ) − Q²(W; ∇û) for both species.
    pub fn rhs_semidiscrete(&self, state: &SymmState) -> Result<RhsEval> {
        let spec = self.spec;
        let len = spec.len();
        let flows = self.flows_at(state.t)?;
        let field = self.field(state)?;
        let mut rate = SymmState::vacuum(spec, state.t);
        let mut dn_buf = vec![vec![0.0; len]; 3];
        let mut dv_buf = vec![vec![0.0; len]; 9];
        for species in Species::BOTH {
            if !self.evolves(species) {
                continue;
            }
            let flow = Self::flow_sample(&flows, species);
            let n = &state.n(species).data;
            let v = &state.v(species).data;
            let eb = self.params.eps_beta(species);
            let half = self.params.law(species).half_gamma_minus_one();
            for axis in 0..3 {
                derivative(&spec, n, axis, self.config.stencil, &mut dn_buf[axis]);
                for k in 0..3 {
                    derivative(&spec, &v[k * len..(k + 1) * len], axis, self.config.stencil, &mut dv_buf[3 * k + axis]);
                }
            }
            let mut out_n = vec![0.0; len];
            let mut out_v = vec![0.0; 3 * len];
            let u = &flow.u.data;
            for idx in 0..len {
                let cut = self.cutoff.as_ref().map_or(1.0, |c| c[idx]);
                let speed = [0, 1, 2].map(|j| eb * v[j * len + idx] + cut * u[j * len + idx]);
                let off = eb * half * n[idx];
                let mut acc = 0.0;
                let mut div_v = 0.0;
                for j in 0..3 {
                    acc += speed[j] * dn_buf[j][idx];
                    div_v += dv_buf[3 * j + j][idx];
                }
                out_n[idx] = -acc - off * div_v;
                for k in 0..3 {
                    let mut a = 0.0;
                    for j in 0..3 {
                        a += speed[j] * dv_buf[3 * k + j][idx];
                    }
                    out_v[k * len + idx] = -a - off * dn_buf[k][idx];
                }
            }
            add_species_sources(species, n, state.v(species), flow, &field.grad_phi, &self.params, &mut out_n, &mut out_v);
            if self.config.artificial_viscosity > 0.0 {
                let nu = self.config.artificial_viscosity;
                for (o, l) in out_n.iter_mut().zip(laplacian_7pt(&spec, n)) {
                    *o += nu * l;
                }
                for k in 0..3 {
                    let lap = laplacian_7pt(&spec, &v[k * len..(k + 1) * len]);
                    for (o, l) in out_v[k * len..(k + 1) * len].iter_mut().zip(lap) {
                        *o += nu * l;
                    }
                }
            }
            rate.n_mut(species).data = out_n;
            rate.v_mut(species).data = out_v;
        }
        Ok(RhsEval {
            rate,
            grad_phi: field.grad_phi,
        })
    }

    /// Largest characteristic speed |w^j + û^j| + ε^β (γ−1) n / 2.
    pub fn max_wave_speed(&self, state: &SymmState) -> Result<f64> {
        let flows = self.flows_at(state.t)?;
        let len = self.spec.len();
        let mut best = 0.0f64;
        for species in Species::BOTH {
            if !self.evolves(species) {
                continue;
            }
            let u = &Self::flow_sample(&flows, species).u.data;
            let n = &state.n(species).data;
            let v = &state.v(species).data;
            let eb = self.params.eps_beta(species);
            let half = self.params.law(species).half_gamma_minus_one();
            for idx in 0..len {
                let cut = self.cutoff.as_ref().map_or(1.0, |c| c[idx]);
                let c = eb * half * n[idx].abs();
                for j in 0..3 {
                    best = best.max((eb * v[j * len + idx] + cut * u[j * len + idx]).abs() + c);
                }
            }
        }
        Ok(best)
    }

    pub fn stable_dt(&self, state: &SymmState) -> Result<f64> {
        let speed = self.max_wave_speed(state)?;
        Ok(if speed > 0.0 { self.config.cfl * self.spec.spacing() / speed } else { f64::INFINITY })
    }

    /// One classical RK4 step followed by the density floor.
    pub fn step_rk4(&self, state: &SymmState, dt: f64) -> Result<SymmState> {
        let limit = self.stable_dt(state)?;
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt, limit });
        }
        let k1 = self.rhs_semidiscrete(state)?.rate;
        let mut s = state.clone();
        s.add_scaled(0.5 * dt, &k1);
        s.t = state.t + 0.5 * dt;
        let k2 = self.rhs_semidiscrete(&s)?.rate;
        let mut s = state.clone();
        s.add_scaled(0.5 * dt, &k2);
        s.t = state.t + 0.5 * dt;
        let k3 = self.rhs_semidiscrete(&s)?.rate;
        let mut s = state.clone();
        s.add_scaled(dt, &k3);
        s.t = state.t + dt;
        let k4 = self.rhs_semidiscrete(&s)?.rate;
        let mut next = state.clone();
        next.add_scaled(dt / 6.0, &k1);
        next.add_scaled(dt / 3.0, &k2);
        next.add_scaled(dt / 3.0, &k3);
        next.add_scaled(dt / 6.0, &k4);
        next.t = state.t + dt;
        if let Some(field) = next.first_non_finite() {
            return Err(Error::NonFinite {
                field: field.to_string(),
                step: 0,
                t: next.t,
            });
        }
        self.apply_floor(&mut next)?;
        if let Some(bg) = &self.ion_background {
            next.n_i.data = bg.density(&self.spec, next.t)?;
        }
        Ok(next)
    }

    fn apply_floor(&self, state: &mut SymmState) -> Result<()> {
        let mut negative = [(0usize, 0.0f64); 2];
        for (slot, species) in Species::BOTH.into_iter().enumerate() {
            if !self.evolves(species) {
                continue;
            }
            let n = &mut state.n_mut(species).data;
            let max = n.iter().fold(0.0f64, |m, v| m.max(*v));
            let min = n.iter().fold(0.0f64, |m, v| m.min(*v));
            if min < -self.config.undershoot_tolerance * max {
                return Err(Error::Undershoot {
                    species: species.name().to_string(),
                    value: min / max.max(f64::MIN_POSITIVE),
                    tolerance: self.config.undershoot_tolerance,
                    step: 0,
                });
            }
            let mut count = 0;
            for v in n.iter_mut() {
                if *v < 0.0 {
                    if self.config.clip_negative {
                        *v = 0.0;
                    }
                    count += 1;
                }
            }
            if count > 0 {
                log::debug!("{species}: {count} negative density samples (min {min:e})");
            }
            negative[slot] = (count, min);
        }
        *self.last_negative.lock().unwrap_or_else(|e| e.into_inner()) = negative;
        Ok(())
    }

    fn mass(&self, state: &SymmState, species: Species) -> f64 {
        let c = self.params.poisson_coeff(species);
        let p = self.params.law(species).density_exponent();
        c * state.n(species).data.iter().map(|&v| density_power(v.max(0.0), p)).sum::<f64>() * self.spec.cell_volume()
    }

    fn record(&self, rec: &mut RunRecord, state: &SymmState, grad_phi: &GridField, dt: f64, speed: f64, steps: usize, bounds: &[f64; 2]) -> Result<()> {
        rec.times.push(state.t);
        rec.steps.push(steps);
        rec.dt.push(dt);
        rec.max_speed.push(speed);
        let negative = *self.last_negative.lock().unwrap_or_else(|e| e.into_inner());
        for (slot, species) in Species::BOTH.into_iter().enumerate() {
            let norms = if self.config.record_norms {
                measure_species(state, species, grad_phi, &self.params, self.config.hdot_method)?
            } else {
                NormRow {
                    t: state.t,
                    ..Default::default()
                }
            };
            let weighted = weighted_functionals(&norms, &self.params);
            let mass = self.mass(state, species);
            rec.species_mut(species).push(SpeciesRecord {
                norms,
                weighted,
                support_radius: state.support_radius(species),
                support_bound: bounds[slot],
                mass,
                negative_cells: negative[slot].0,
                min_density: negative[slot].1,
            });
        }
        Ok(())
    }

    /// Integrates from `initial` to `config.t_final`. Step failures stop the
    /// run and are returned in [`RunOutput::error`] with the partial record.
    pub fn run(&self, initial: SymmState) -> Result<RunOutput> {
        self.run_with(initial, |_, _| Ok(()))
    }

    /// [`run`](Self::run) with a callback invoked on every recorded state,
    /// receiving the record index.
    pub fn run_with(&self, initial: SymmState, mut on_record: impl FnMut(usize, &SymmState) -> Result<()>) -> Result<RunOutput> {
        let spec = self.spec;
        let h = spec.spacing();
        let mut state = initial;
        if !state.spec().same_as(&spec) {
            return Err(Error::GridMismatch("initial state grid differs from solver grid".into()));
        }
        if let Some(bg) = &self.ion_background {
            state.n_i.data = bg.density(&spec, state.t)?;
        }
        let thr = self.config.support_threshold;
        let mut bounds = [0.0; 2];
        for (slot, species) in Species::BOTH.into_iter().enumerate() {
            let r = support_radius(&spec, &state.n(species).data, thr);
            state.set_support_radius(species, r);
            bounds[slot] = support_radius(&spec, &state.n(species).data, 0.0) + h * 3f64.sqrt();
        }
        let mut rec = RunRecord::default();
        let mut grad_phi = self.field(&state)?.grad_phi;
        let speed0 = self.max_wave_speed(&state)?;
        self.record(&mut rec, &state, &grad_phi, 0.0, speed0, 0, &bounds)?;
        on_record(0, &state)?;
        let t_final = self.config.t_final;
        let mut steps = 0usize;
        let planned = self.config.fixed_dt.map(|dt| (((t_final - state.t) / dt).round() as usize).max(1));
        let mut error = None;
        while state.t < t_final * (1.0 - 1e-14) && error.is_none() {
            let result = (|| -> Result<(SymmState, f64, f64)> {
                let speed = self.max_wave_speed(&state)?;
                let dt = match (self.config.fixed_dt, planned) {
                    (Some(_), Some(n)) => (t_final - state.t) / (n - steps) as f64,
                    _ => self.stable_dt(&state)?.min(t_final - state.t),
                };
                let next = self.step_rk4(&state, dt)?;
                Ok((next, dt, speed))
            })();
            match result {
                Ok((mut next, dt, speed)) => {
                    steps += 1;
                    // Gronwall bound on |X(t)| with measured |w|_∞ and û growth
                    let flows0 = self.flows_at(state.t)?;
                    let flows1 = self.flows_at(next.t)?;
                    for (slot, species) in Species::BOTH.into_iter().enumerate() {
                        let eb = self.params.eps_beta(species);
                        let w_inf = eb * crate::diagnostics::norm_inf(state.v(species)).max(crate::diagnostics::norm_inf(next.v(species)));
                        let u_origin = [state.t, next.t]
                            .iter()
                            .map(|&t| self.flow(species).eval_u_hat(t, [0.0; 3]).map(|u| (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()))
                            .collect::<Result<Vec<f64>>>()?;
                        let lip = flows0.grad_sup[slot].max(flows1.grad_sup[slot]);
                        let a = w_inf + u_origin[0].max(u_origin[1]);
                        bounds[slot] = (bounds[slot] + dt * a) * (dt * lip).exp();
                        let r = support_radius(&spec, &next.n(species).data, thr);
                        next.set_support_radius(species, r);
                        if self.evolves(species) {
                            if r >= 0.9 * spec.half_length {
                                error = Some(Error::SupportEscape {
                                    species: species.name().into(),
                                    radius: r,
                                    limit: 0.9 * spec.half_length,
                                    t: next.t,
                                });
                            } else if r > bounds[slot] + 2.0 * h {
                                error = Some(Error::SupportBound {
                                    species: species.name().into(),
                                    radius: r,
                                    bound: bounds[slot],
                                    t: next.t,
                                });
                            }
                        }
                    }
                    state = next;
                    let last = state.t >= t_final * (1.0 - 1e-14);
                    if steps % self.config.record_every == 0 || last || error.is_some() {
                        grad_phi = self.field(&state)?.grad_phi;
                        self.record(&mut rec, &state, &grad_phi, dt, speed, steps, &bounds)?;
                        on_record(rec.times.len() - 1, &state)?;
                    }
                }
                Err(e) => {
                    error = Some(match e {
                        Error::NonFinite { field, t, .. } => Error::NonFinite { field, step: steps + 1, t },
                        Error::Undershoot { species, value, tolerance, .. } => Error::Undershoot {
                            species,
                            value,
                            tolerance,
                            step: steps + 1,
                        },
                        other => other,
                    });
                }
            }
        }
        if let Some(e) = &error {
            log::warn!("run stopped at t = {}: {e}", state.t);
        }
        Ok(RunOutput {
            record: rec,
            state,
            grad_phi,
            steps,
            error,
        })
    }
}
