//! Discrete norms, the time-weighted functionals, rate regressions, the
//! energy-inequality report and the bipolar-versus-limit error meter.

use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fft::Fft3;
use crate::grid::{derivative, GridField, StencilOrder};
use crate::model::SymmState;
use crate::params::{FluidParams, Species};

/// How Ḣ^σ seminorms are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HdotMethod {
    /// Repeated fourth-order differences.
    #[default]
    Stencil,
    /// Multiplier |k|^σ on the box treated as periodic.
    Spectral,
}

/// max over points of the Euclidean magnitude across components.
pub fn norm_inf(f: &GridField) -> f64 {
    let n = f.spec.len();
    (0..n)
        .map(|i| (0..f.components).map(|c| f.data[c * n + i].powi(2)).sum::<f64>())
        .fold(0.0, f64::max)
        .sqrt()
}

/// (Σ |f|^q h³)^{1/q}.
pub fn norm_q(f: &GridField, q: f64) -> f64 {
    let n = f.spec.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mag2: f64 = (0..f.components).map(|c| f.data[c * n + i].powi(2)).sum();
        acc += if q == 2.0 { mag2 } else { mag2.sqrt().powf(q) };
    }
    (acc * f.spec.cell_volume()).powf(1.0 / q)
}

/// ‖f‖_{Ḣ^σ} = |∇^σ f|₂ summed over all components.
pub fn norm_hdot(f: &GridField, sigma: usize, method: HdotMethod) -> Result<f64> {
    Ok(hdot_norms(f, &[sigma], method)?[0])
}

/// Several Ḣ^σ seminorms in one sweep.
pub fn hdot_norms(f: &GridField, sigmas: &[usize], method: HdotMethod) -> Result<Vec<f64>> {
    if sigmas.iter().any(|&s| s == 0 || s > 8) {
        return Err(Error::InvalidParameter(format!("Sobolev orders {sigmas:?} must lie in 1..=8")));
    }
    match method {
        HdotMethod::Stencil => Ok(stencil_hdot(f, sigmas)),
        HdotMethod::Spectral => Ok(spectral_hdot(f, sigmas)),
    }
}

fn stencil_hdot(f: &GridField, sigmas: &[usize]) -> Vec<f64> {
    let spec = f.spec;
    let top = sigmas.iter().copied().max().unwrap_or(0);
    let vol = spec.cell_volume();
    let mut out = vec![0.0; top + 1];
    let mut scratch = vec![0.0; spec.len()];
    for c in 0..f.components {
        let mut level: Vec<Vec<f64>> = vec![f.component(c).to_vec()];
        for sigma in 1..=top {
            let mut next = Vec::with_capacity(level.len() * 3);
            for g in &level {
                for axis in 0..3 {
                    derivative(&spec, g, axis, StencilOrder::Fourth, &mut scratch);
                    next.push(scratch.clone());
                }
            }
            out[sigma] += next.iter().flat_map(|g| g.iter().map(|v| v * v)).sum::<f64>();
            level = next;
        }
    }
    sigmas.iter().map(|&s| (out[s] * vol).sqrt()).collect()
}

fn spectral_hdot(f: &GridField, sigmas: &[usize]) -> Vec<f64> {
    let spec = f.spec;
    let n = spec.cells;
    let fft = Fft3::new(n);
    let kfac = std::f64::consts::PI / spec.half_length;
    let wave = |i: usize| -> f64 {
        let m = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
        m * kfac
    };
    let mut out = vec![0.0; sigmas.len()];
    for c in 0..f.components {
        let mut buf: Vec<Complex64> = f.component(c).iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward(&mut buf);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let k2 = wave(i).powi(2) + wave(j).powi(2) + wave(k).powi(2);
                    let p = buf[(i * n + j) * n + k].norm_sqr();
                    for (o, &s) in out.iter_mut().zip(sigmas) {
                        *o += k2.powi(s as i32) * p;
                    }
                }
            }
        }
    }
    let scale = spec.cell_volume() / spec.len() as f64;
    out.into_iter().map(|v| (v * scale).sqrt()).collect()
}

/// Unweighted norms of one species at one time.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct NormRow {
    pub t: f64,
    pub n_inf: f64,
    /// |V|_∞ with V = ε^{−β} w.
    pub v_inf: f64,
    pub w_inf: f64,
    pub n_q: f64,
    /// Ẋ₁ = ‖W‖_{Ḣ¹}.
    pub x_dot_1: f64,
    /// Ẋ_s = ‖W‖_{Ḣ^s}.
    pub x_dot_s: f64,
    pub grad_phi_inf: f64,
    pub grad_phi_l2: f64,
}

/// The time-weighted quantities built from a [`NormRow`].
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct WeightedRow {
    pub t: f64,
    pub n_inf: f64,
    /// ε^{−β} w^∞ = (1+t)^{−1} |V|_∞.
    pub v_inf: f64,
    pub n_q: f64,
    pub y_dot_1: f64,
    pub y_dot_s: f64,
    pub y_tilde: f64,
    pub y: f64,
}

/// W = (n, V) of one species as a four-component field.
pub fn species_w(state: &SymmState, species: Species) -> GridField {
    let n = state.n(species);
    let v = state.v(species);
    let mut data = Vec::with_capacity(4 * n.data.len());
    data.extend_from_slice(&n.data);
    data.extend_from_slice(&v.data);
    GridField {
        spec: n.spec,
        components: 4,
        data,
    }
}

pub fn measure_species(state: &SymmState, species: Species, grad_phi: &GridField, params: &FluidParams, method: HdotMethod) -> Result<NormRow> {
    let s = params.sobolev_s;
    let w = species_w(state, species);
    let hd = hdot_norms(&w, &[1, s], method)?;
    let v_inf = norm_inf(state.v(species));
    Ok(NormRow {
        t: state.t,
        n_inf: norm_inf(state.n(species)),
        v_inf,
        w_inf: params.eps_beta(species) * v_inf,
        n_q: norm_q(state.n(species), params.lebesgue_q),
        x_dot_1: hd[0],
        x_dot_s: hd[1],
        grad_phi_inf: norm_inf(grad_phi),
        grad_phi_l2: norm_q(grad_phi, 2.0),
    })
}

/// Applies the weights (1+t)^{−1}, (1+t)^{−d/q−1} and (1+t)^{σ−d/2−1}.
pub fn weighted_functionals(row: &NormRow, params: &FluidParams) -> WeightedRow {
    let d = params.dim as f64;
    let q = params.lebesgue_q;
    let s = params.sobolev_s as f64;
    let tp = 1.0 + row.t;
    let n_inf = row.n_inf / tp;
    let v_inf = row.v_inf / tp;
    let n_q = tp.powf(-d / q - 1.0) * row.n_q;
    let y_dot_1 = tp.powf(1.0 - d / 2.0 - 1.0) * row.x_dot_1;
    let y_dot_s = tp.powf(s - d / 2.0 - 1.0) * row.x_dot_s;
    let y_tilde = n_q + y_dot_1 + y_dot_s;
    WeightedRow {
        t: row.t,
        n_inf,
        v_inf,
        n_q,
        y_dot_1,
        y_dot_s,
        y_tilde,
        y: y_tilde + n_inf + v_inf,
    }
}

/// Least-squares fit of log(value) against log(1+t).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-log regression.
    pub residual: f64,
    pub samples: usize,
    pub excluded: usize,
}

/// Slope of log y against log x over points with x in `window`.
pub fn fit_loglog(x: &[f64], y: &[f64], window: Option<(f64, f64)>) -> Result<RateFit> {
    let mut pts = Vec::new();
    let mut excluded = 0;
    for (&xi, &yi) in x.iter().zip(y) {
        if let Some((lo, hi)) = window {
            if xi < lo || xi > hi {
                continue;
            }
        }
        if yi > 0.0 && yi.is_finite() && xi > 0.0 {
            pts.push((xi.ln(), yi.ln()));
        } else {
            excluded += 1;
        }
    }
    if excluded > 0 {
        log::warn!("rate fit: {excluded} non-positive samples excluded");
    }
    if pts.len() < 2 {
        return Err(Error::InvalidParameter(format!("rate fit needs at least 2 positive samples, got {}", pts.len())));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / m).sqrt();
    Ok(RateFit {
        slope,
        intercept,
        residual,
        samples: pts.len(),
        excluded,
    })
}

/// Decay exponent of `values` against (1+t) over the window.
pub fn fit_decay_rate(t: &[f64], values: &[f64], window: (f64, f64)) -> Result<RateFit> {
    let in_window = t.iter().filter(|&&v| v >= window.0 && v <= window.1).count();
    if in_window < 5 {
        return Err(Error::InvalidParameter(format!("decay fit needs at least 5 samples in the window, got {in_window}")));
    }
    let tp: Vec<f64> = t.iter().map(|v| 1.0 + v).collect();
    fit_loglog(&tp, values, Some((1.0 + window.0, 1.0 + window.1)))
}

/// Nonnegative least squares min ‖A c − b‖ with c ≥ 0, by active-set
/// enumeration (intended for a handful of columns).
pub fn nnls_small(cols: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let k = cols.len();
    assert!(k <= 12, "nnls_small is meant for a handful of columns");
    let mut best = vec![0.0; k];
    let mut best_res = b.iter().map(|v| v * v).sum::<f64>();
    for mask in 1u32..(1 << k) {
        let idx: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let p = idx.len();
        let a = nalgebra::DMatrix::from_fn(b.len(), p, |r, c| cols[idx[c]][r]);
        let rhs = nalgebra::DVector::from_column_slice(b);
        let Ok(sol) = a.clone().svd(true, true).solve(&rhs, 1e-14) else {
            continue;
        };
        if sol.iter().any(|v| *v < 0.0) {
            continue;
        }
        let res = (&a * &sol - &rhs).norm_squared();
        if res < best_res {
            best_res = res;
            best = vec![0.0; k];
            for (j, &i) in idx.iter().enumerate() {
                best[i] = sol[j];
            }
        }
    }
    best
}

/// Outcome of the energy-inequality diagnostic.
#[derive(Clone, Debug, Serialize)]
pub struct OdeInequalityReport {
    pub a: f64,
    /// NNLS constants for Y/(1+t)², Y², (1+t)^{2/(γ−1)} Y^{2/(γ−1)}.
    pub constants: [f64; 3],
    /// max over samples of left side − fitted right side.
    pub max_violation: f64,
    pub satisfied_fraction: f64,
    pub c3: f64,
    pub eta: f64,
    /// Z(t) samples and max Z / Z(0).
    pub z: Vec<f64>,
    pub z_ratio_max: f64,
    pub noisy: bool,
}

/// Differences the Y series, fits the right-hand terms of the energy
/// inequality and the bootstrap functional Z = e^{c₃t/(1+t)}(1+t)^{a−η} Y.
pub fn ode_inequality_report(t: &[f64], y: &[f64], a: f64, gamma: f64) -> Result<OdeInequalityReport> {
    if t.len() != y.len() || t.len() < 3 {
        return Err(Error::InvalidParameter("inequality report needs at least 3 matching samples".into()));
    }
    let m = t.len();
    let mut dy = vec![0.0; m];
    for i in 0..m {
        let (lo, hi) = if i == 0 { (0, 1) } else if i == m - 1 { (m - 2, m - 1) } else { (i - 1, i + 1) };
        dy[i] = (y[hi] - y[lo]) / (t[hi] - t[lo]);
    }
    let max_gap = t.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let noisy = max_gap > 0.25 * (1.0 + t[0]);
    let p = 2.0 / (gamma - 1.0);
    let left: Vec<f64> = (0..m).map(|i| dy[i] + a / (1.0 + t[i]) * y[i]).collect();
    let cols: Vec<Vec<f64>> = vec![
        (0..m).map(|i| y[i] / (1.0 + t[i]).powi(2)).collect(),
        (0..m).map(|i| y[i] * y[i]).collect(),
        (0..m).map(|i| (1.0 + t[i]).powf(p) * y[i].max(0.0).powf(p)).collect(),
    ];
    let target: Vec<f64> = left.iter().map(|v| v.max(0.0)).collect();
    let c = nnls_small(&cols, &target);
    let mut max_violation = f64::NEG_INFINITY;
    let mut ok = 0;
    for i in 0..m {
        let rhs: f64 = (0..3).map(|k| c[k] * cols[k][i]).sum();
        let v = left[i] - rhs;
        max_violation = max_violation.max(v);
        if v <= 1e-12 * (1.0 + left[i].abs()) {
            ok += 1;
        }
    }

    let zero = y.iter().all(|v| *v == 0.0);
    let (c3, eta, z) = if zero {
        (0.0, 0.0, vec![0.0; m])
    } else {
        // log Y + a log(1+t) ≈ α + η log(1+t) − c₃ t/(1+t), with η, c₃ ≥ 0
        let pos: Vec<usize> = (0..m).filter(|&i| y[i] > 0.0).collect();
        let ll: Vec<f64> = pos.iter().map(|&i| (1.0 + t[i]).ln()).collect();
        let ss: Vec<f64> = pos.iter().map(|&i| t[i] / (1.0 + t[i])).collect();
        let rhs: Vec<f64> = pos.iter().zip(&ll).map(|(&i, l)| y[i].ln() + a * l).collect();
        let center = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| x - mean).collect::<Vec<f64>>()
        };
        let neg_s: Vec<f64> = ss.iter().map(|v| -v).collect();
        let coef = nnls_small(&[center(&ll), center(&neg_s)], &center(&rhs));
        let (eta, c3) = (coef[0], coef[1]);
        let z: Vec<f64> = (0..m)
            .map(|i| (c3 * t[i] / (1.0 + t[i])).exp() * (1.0 + t[i]).powf(a - eta) * y[i])
            .collect();
        (c3, eta, z)
    };
    let z_ratio_max = if z[0] > 0.0 { z.iter().fold(0.0f64, |acc, v| acc.max(*v)) / z[0] } else { 0.0 };
    Ok(OdeInequalityReport {
        a,
        constants: [c[0], c[1], c[2]],
        max_violation,
        satisfied_fraction: ok as f64 / m as f64,
        c3,
        eta,
        z,
        z_ratio_max,
        noisy,
    })
}

/// |·|_∞ + Ḣ¹ + Ḣ^s.
pub fn gamma_norm(f: &GridField, s: usize, method: HdotMethod) -> Result<f64> {
    let hd = hdot_norms(f, &[1, s], method)?;
    Ok(norm_inf(f) + hd[0] + hd[1])
}

fn difference(a: &GridField, b: &GridField) -> Result<GridField> {
    if !a.spec.same_as(&b.spec) || a.components != b.components {
        return Err(Error::GridMismatch("compared fields differ in grid or shape".into()));
    }
    let mut out = a.clone();
    for (x, y) in out.data.iter_mut().zip(&b.data) {
        *x -= y;
    }
    Ok(out)
}

/// Γ-norm distance between two fields.
pub fn gamma_distance(a: &GridField, b: &GridField, s: usize) -> Result<f64> {
    gamma_norm(&difference(a, b)?, s, HdotMethod::Stencil)
}

/// Errors between a bipolar state and the limit state at the same time.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ErrorRow {
    pub epsilon: f64,
    pub t: f64,
    /// Γ-norm of n_e − n̄_e.
    pub electron_density: f64,
    /// Γ-norm of u_e − ū_e (= w_e − w̄_e, the reference flows coincide).
    pub electron_velocity: f64,
    pub electron_total: f64,
    pub ion_density: f64,
    /// |u_i − û_i|_∞ = |w_i|_∞.
    pub ion_velocity_inf: f64,
    pub potential_grad_inf: f64,
    pub potential_grad_l2: f64,
}

/// Compares bipolar fields with limit fields. Velocities are compared in
/// physical units w = ε^β V.
pub fn error_vs_limit(
    bipolar: &SymmState,
    limit: &SymmState,
    grad_phi: &GridField,
    grad_phi_limit: &GridField,
    params: &FluidParams,
) -> Result<ErrorRow> {
    let s = params.sobolev_s;
    let electron_density = gamma_distance(&bipolar.n_e, &limit.n_e, s)?;
    let electron_velocity = gamma_distance(&bipolar.v_e, &limit.v_e, s)?;
    let ion_density = gamma_distance(&bipolar.n_i, &limit.n_i, s)?;
    let ion_w = difference(&bipolar.v_i, &limit.v_i)?;
    let dphi = difference(grad_phi, grad_phi_limit)?;
    Ok(ErrorRow {
        epsilon: params.epsilon,
        t: bipolar.t,
        electron_density,
        electron_velocity,
        electron_total: electron_density + electron_velocity,
        ion_density,
        ion_velocity_inf: params.eps_beta(Species::Ion) * norm_inf(&ion_w),
        potential_grad_inf: norm_inf(&dphi),
        potential_grad_l2: norm_q(&dphi, 2.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn zero_field_norms() {
        let spec = GridSpec::new(1.0, 8).unwrap();
        let z = GridField::zeros(spec, 3);
        assert_eq!(norm_inf(&z), 0.0);
        assert_eq!(norm_q(&z, 3.0), 0.0);
        assert_eq!(norm_hdot(&z, 2, HdotMethod::Stencil).unwrap(), 0.0);
        assert_eq!(norm_hdot(&z, 2, HdotMethod::Spectral).unwrap(), 0.0);
        assert!(norm_hdot(&z, 0, HdotMethod::Stencil).is_err());
    }

    #[test]
    fn spectral_eigenfunction() {
        let spec = GridSpec::new(1.5, 16).unwrap();
        let l = spec.half_length;
        let f = GridField::from_fn(spec, |x| (std::f64::consts::PI * x[0] / l).sin());
        let h1 = norm_hdot(&f, 1, HdotMethod::Spectral).unwrap();
        let l2 = norm_q(&f, 2.0);
        assert!((h1 - std::f64::consts::PI / l * l2).abs() < 1e-10 * h1);
    }

    #[test]
    fn q2_is_l2() {
        let spec = GridSpec::new(1.0, 8).unwrap();
        let f = GridField::from_fn(spec, |x| x[0] * x[1] + 0.3);
        let direct = (f.data.iter().map(|v| v * v).sum::<f64>() * spec.cell_volume()).sqrt();
        assert!((norm_q(&f, 2.0) - direct).abs() < 1e-14 * direct);
    }

    #[test]
    fn weights_at_origin_and_t1() {
        let p = FluidParams::default();
        let row = NormRow {
            t: 0.0,
            n_inf: 1.0,
            v_inf: 2.0,
            w_inf: 2.0,
            n_q: 3.0,
            x_dot_1: 4.0,
            x_dot_s: 5.0,
            ..Default::default()
        };
        let w = weighted_functionals(&row, &p);
        assert_eq!(w.y, 15.0);
        let w1 = weighted_functionals(&NormRow { t: 1.0, ..row }, &p);
        assert!((w1.y_dot_s - 5.0 * 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn power_law_fits() {
        let t: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = t.iter().map(|v| 3.0 * (1.0 + v).powf(-2.0)).collect();
        let fit = fit_decay_rate(&t, &y, (0.0, 10.0)).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-10);
        let c = vec![4.0; t.len()];
        assert!(fit_decay_rate(&t, &c, (0.0, 10.0)).unwrap().slope.abs() < 1e-12);
        assert!(fit_decay_rate(&t[..3], &y[..3], (0.0, 10.0)).is_err());
    }

    #[test]
    fn nnls_recovers_nonnegative_combination() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let cols = vec![x.iter().map(|v| v * v).collect::<Vec<_>>(), vec![1.0; 10], x.clone()];
        let b: Vec<f64> = x.iter().map(|v| 2.0 * v * v + 0.5).collect();
        let c = nnls_small(&cols, &b);
        assert!((c[0] - 2.0).abs() < 1e-10 && (c[1] - 0.5).abs() < 1e-10 && c[2].abs() < 1e-10);
        // a negative unconstrained coefficient is clamped to zero
        let b: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!(nnls_small(&cols[2..], &b)[0] == 0.0);
    }

    #[test]
    fn inequality_equality_case() {
        let a = 1.5;
        let t: Vec<f64> = (0..41).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|v| 0.01 * (1.0 + v).powf(-a)).collect();
        let rep = ode_inequality_report(&t, &y, a, 4.0 / 3.0).unwrap();
        assert!(rep.z_ratio_max < 1.0 + 1e-6);
        let zero = vec![0.0; t.len()];
        let rep = ode_inequality_report(&t, &zero, a, 4.0 / 3.0).unwrap();
        assert!(rep.z.iter().all(|v| *v == 0.0) && rep.satisfied_fraction == 1.0);
    }
}
