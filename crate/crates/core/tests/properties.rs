use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eplb::burgers::{flow_forward, BurgersInitial, Perturbation, ProfileKind};
use eplb::diagnostics::{fit_decay_rate, gamma_distance, norm_hdot, weighted_functionals, HdotMethod, NormRow};
use eplb::grid::{GridField, GridSpec};
use eplb::model::{assemble_flux_matrix, flux_eigenvalues, n_to_rho, rho_to_n, DensityProfile, SymmState};
use eplb::params::{FluidParams, PolytropicLaw, Species};
use eplb::poisson::FreeSpacePoisson;
use eplb::solver::{BipolarSolver, SolverConfig};

fn species_strategy() -> impl Strategy<Value = Species> {
    prop_oneof![Just(Species::Ion), Just(Species::Electron)]
}

fn point(r: f64) -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-r..r)
}

fn perturbed_flow(kappa: f64, b: [f64; 3], amp: f64, sine: bool) -> BurgersInitial {
    let profile = if sine { ProfileKind::BumpSine } else { ProfileKind::BumpRadial };
    BurgersInitial::scaled_identity(kappa).with_b(b).with_perturbation(Perturbation {
        profile,
        amplitude: amp,
        width: 1.0,
        center: [0.1, -0.2, 0.05],
    })
}

trait WithB {
    fn with_b(self, b: [f64; 3]) -> Self;
}

impl WithB for BurgersInitial {
    fn with_b(mut self, b: [f64; 3]) -> Self {
        self.b = b;
        self
    }
}

fn norm(x: [f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn flux_matrix_is_symmetric_with_closed_form_spectrum(
        n in 0.0..2.0f64,
        v in prop::array::uniform3(-3.0..3.0f64),
        u in prop::array::uniform3(-3.0..3.0f64),
        eps in 0.01..1.0f64,
        gamma in 1.05..3.0f64,
        axis in 0usize..3,
        species in species_strategy(),
    ) {
        let mut params = FluidParams::default().with_epsilon(eps);
        params.ion = PolytropicLaw::unit_normalized(gamma);
        params.electron = PolytropicLaw::unit_normalized(gamma);
        let w = [n, v[0], v[1], v[2]];
        let a = assemble_flux_matrix(w, u, &params, species, axis);
        prop_assert_eq!(a, a.transpose());

        let eb = if species == Species::Ion { eps } else { 1.0 };
        let speed = eb * v[axis] + u[axis];
        let c = eb * (gamma - 1.0) / 2.0 * n;
        let mut expected = [speed, speed, speed - c, speed + c];
        expected.sort_by(f64::total_cmp);
        let mut got: Vec<f64> = a.symmetric_eigen().eigenvalues.iter().copied().collect();
        got.sort_by(f64::total_cmp);
        let mut closed = flux_eigenvalues(w, u, &params, species, axis);
        closed.sort_by(f64::total_cmp);
        for k in 0..4 {
            prop_assert!((got[k] - expected[k]).abs() <= 1e-10 * (1.0 + expected[k].abs()), "{:?} vs {:?}", got, expected);
            prop_assert!((closed[k] - expected[k]).abs() <= 1e-12 * (1.0 + expected[k].abs()));
        }
    }

    #[test]
    fn density_variables_roundtrip(
        amp in 1e-3..5.0f64,
        width in 0.2..1.0f64,
        gamma in 1.1..3.0f64,
        entropy in 0.05..4.0f64,
    ) {
        let law = PolytropicLaw::new(gamma, entropy);
        let spec = GridSpec::new(2.0, 8).unwrap();
        let mut profile = DensityProfile::bump(amp, width);
        profile.center = [0.1, 0.0, -0.1];
        let rho = GridField::from_fn(spec, |x| profile.rho(x, &law) + 1e-3);
        let back = n_to_rho(&rho_to_n(&rho, &law).unwrap(), &law).unwrap();
        for (a, b) in rho.data.iter().zip(&back.data) {
            prop_assert!((a - b).abs() <= 1e-12 * a, "{} {}", a, b);
        }
    }

    #[test]
    fn foot_point_inverts_forward_flow(
        x in point(4.0),
        t in 0.0..20.0f64,
        kappa in 0.3..1.0f64,
        b in prop::array::uniform3(-0.5..0.5f64),
        amp in 0.0..0.1f64,
        sine in any::<bool>(),
    ) {
        let u0 = perturbed_flow(kappa, b, amp, sine);
        let sol = u0.eval_x0(t, x).unwrap();
        let fwd = flow_forward(sol.x0, t, &u0);
        let err = norm([0, 1, 2].map(|i| fwd[i] - x[i]));
        prop_assert!(err <= 1e-10 * (1.0 + norm(x)), "{}", err);
        prop_assert!(sol.residual <= 1e-12 * (1.0 + norm(x)));

        let x1 = flow_forward(x, t, &u0);
        let back = u0.eval_x0(t, x1).unwrap().x0;
        let err = norm([0, 1, 2].map(|i| back[i] - x[i]));
        prop_assert!(err <= 1e-10 * (1.0 + norm(x1)), "{}", err);
    }

    #[test]
    fn reference_velocity_grows_at_most_linearly(
        x in point(50.0),
        t in 0.0..50.0f64,
        kappa in 0.3..1.0f64,
        b in prop::array::uniform3(-0.5..0.5f64),
        amp in 0.0..0.1f64,
    ) {
        let u0 = perturbed_flow(kappa, b, amp, true);
        let u = u0.eval_u_hat(t, x).unwrap();
        // |x0| <= |x| + (|b| + amp)/kappa for A = kappa I
        let lower = norm(b) + amp;
        let c = kappa * (1.0 + lower / kappa) + lower;
        prop_assert!(norm(u) <= c * (1.0 + norm(x)), "{:?}", u);
    }

    #[test]
    fn identity_flow_decomposition_is_exact(x in point(10.0), t in 0.0..50.0f64) {
        let u0 = BurgersInitial::scaled_identity(1.0);
        let (u, g) = u0.u_hat_and_grad(t, x).unwrap();
        let k = u0.k_field(t, x).unwrap();
        for i in 0..3 {
            prop_assert!((u[i] - x[i] / (1.0 + t)).abs() <= 1e-14 * (1.0 + x[i].abs()));
        }
        prop_assert!((g - Matrix3::identity() / (1.0 + t)).abs().max() <= 1e-15);
        prop_assert!(k.abs().max() <= 1e-12);
    }

    #[test]
    fn weighted_functionals_match_cross_evaluation(
        raw in prop::array::uniform6(0.0..10.0f64),
        t in 0.0..100.0f64,
        eps in 0.05..1.0f64,
    ) {
        let params = FluidParams::default().with_epsilon(eps);
        let row = NormRow {
            t,
            n_inf: raw[0],
            v_inf: raw[1],
            w_inf: eps * raw[1],
            n_q: raw[2],
            x_dot_1: raw[3],
            x_dot_s: raw[4],
            grad_phi_inf: raw[5],
            grad_phi_l2: raw[5],
        };
        let w = weighted_functionals(&row, &params);
        // d = 3, q = 2, s = 3
        let tp = 1.0 + t;
        let expected = [
            raw[0] / tp,
            raw[1] / tp,
            raw[2] / (tp * tp * tp.sqrt()),
            raw[3] / (tp * tp.sqrt()),
            raw[4] * tp.sqrt(),
        ];
        let got = [w.n_inf, w.v_inf, w.n_q, w.y_dot_1, w.y_dot_s];
        for k in 0..5 {
            prop_assert!((got[k] - expected[k]).abs() <= 1e-14 * (1.0 + expected[k]), "{} {} {}", k, got[k], expected[k]);
        }
        let y_tilde = expected[2] + expected[3] + expected[4];
        prop_assert!((w.y_tilde - y_tilde).abs() <= 1e-14 * (1.0 + y_tilde));
        let y = y_tilde + expected[0] + expected[1];
        prop_assert!((w.y - y).abs() <= 1e-14 * (1.0 + y));
    }

    #[test]
    fn decay_fit_recovers_power_laws(c in 1e-6..1e3f64, p in -5.0..1.0f64, t0 in 0.0..5.0f64) {
        let t: Vec<f64> = (0..12).map(|k| t0 + k as f64 * 0.7).collect();
        let v: Vec<f64> = t.iter().map(|s| c * (1.0 + s).powf(p)).collect();
        let fit = fit_decay_rate(&t, &v, (t0, t0 + 100.0)).unwrap();
        prop_assert!((fit.slope - p).abs() <= 1e-10, "{}", fit.slope);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gamma_distance_is_a_metric(seed in any::<u64>()) {
        let spec = GridSpec::new(1.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut field = || (0..spec.len()).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let a = GridField::scalar(spec, field()).unwrap();
        let b = GridField::scalar(spec, field()).unwrap();
        let c = GridField::scalar(spec, field()).unwrap();
        let ab = gamma_distance(&a, &b, 3).unwrap();
        let ba = gamma_distance(&b, &a, 3).unwrap();
        prop_assert_eq!(gamma_distance(&a, &a, 3).unwrap(), 0.0);
        prop_assert!(ab > 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab);
        let bc = gamma_distance(&b, &c, 3).unwrap();
        let ac = gamma_distance(&a, &c, 3).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12 * (ab + bc));
    }

    #[test]
    fn hdot_stencil_agrees_with_spectral(
        width in 0.5..0.7f64,
        center in point(0.2),
        sigma in 1usize..=3,
    ) {
        let spec = GridSpec::new(2.5, 48).unwrap();
        let f = GridField::from_fn(spec, |x| {
            let r2: f64 = (0..3).map(|i| (x[i] - center[i]).powi(2)).sum();
            (-r2 / (width * width)).exp()
        });
        let a = norm_hdot(&f, sigma, HdotMethod::Stencil).unwrap();
        let b = norm_hdot(&f, sigma, HdotMethod::Spectral).unwrap();
        prop_assert!((a - b).abs() <= 0.02 * b, "{} {}", a, b);
    }

    #[test]
    fn poisson_solve_is_linear_and_translation_equivariant(seed in any::<u64>(), alpha in -3.0..3.0f64, beta in -3.0..3.0f64) {
        let spec = GridSpec::new(1.0, 16).unwrap();
        let solver = FreeSpacePoisson::new(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = spec.cells;
        let mut random_rhs = || {
            (0..spec.len())
                .map(|idx| {
                    let i = spec.unravel(idx)[0];
                    if spec.boundary_distance(idx) >= 3 && i + 5 <= n { rng.gen_range(-1.0..1.0) } else { 0.0 }
                })
                .collect::<Vec<f64>>()
        };
        let f = random_rhs();
        let g = random_rhs();
        let pf = solver.potential(&f).unwrap();
        let pg = solver.potential(&g).unwrap();
        let combo: Vec<f64> = f.iter().zip(&g).map(|(a, b)| alpha * a + beta * b).collect();
        let pc = solver.potential(&combo).unwrap();
        let scale = pc.iter().chain(&pf).chain(&pg).fold(0.0f64, |m, v| m.max(v.abs()));
        for idx in 0..spec.len() {
            let expect = alpha * pf[idx] + beta * pg[idx];
            prop_assert!((pc[idx] - expect).abs() <= 1e-10 * scale);
        }

        // shift f by one cell along x (f vanishes on the last interior plane)
        let mut shifted = vec![0.0; spec.len()];
        for i in 0..n - 1 {
            for j in 0..n {
                for k in 0..n {
                    shifted[spec.index(i + 1, j, k)] = f[spec.index(i, j, k)];
                }
            }
        }
        let ps = solver.potential(&shifted).unwrap();
        let pmax = pf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n - 1 {
            for j in 0..n {
                for k in 0..n {
                    let d = (ps[spec.index(i + 1, j, k)] - pf[spec.index(i, j, k)]).abs();
                    prop_assert!(d <= 1e-8 * pmax, "{}", d);
                }
            }
        }
    }

    #[test]
    fn vacuum_stays_vacuum(kappa in 0.1..0.8f64, b in prop::array::uniform3(-0.3..0.3f64), eps in 0.05..1.0f64) {
        let spec = GridSpec::new(2.0, 8).unwrap();
        let flow = BurgersInitial::scaled_identity(kappa).with_b(b);
        let solver = BipolarSolver::new(spec, FluidParams::default().with_epsilon(eps), SolverConfig::new(0.1), flow.clone(), flow).unwrap();
        let state = SymmState::vacuum(spec, 0.0);
        let dt = solver.stable_dt(&state).unwrap().min(0.05);
        let next = solver.step_rk4(&state, dt).unwrap();
        for (_, f) in next.field_blocks() {
            prop_assert!(f.data.iter().all(|v| *v == 0.0));
        }
    }
}

#[test]
fn derived_decay_constants() {
    let params = FluidParams::default();
    for s in [Species::Ion, Species::Electron] {
        assert!((params.decay_b(s) - 0.5).abs() < 1e-15);
        assert!((params.decay_a(s) - 1.5).abs() < 1e-15);
    }
    let law = PolytropicLaw::new(2.0, 1.0);
    let n = rho_to_n(&GridField::scalar(GridSpec::new(1.0, 8).unwrap(), vec![1.0; 512]).unwrap(), &law).unwrap();
    assert!((n.data[0] - 8f64.sqrt()).abs() < 1e-14);
}

#[test]
fn linear_flow_closed_form() {
    let a = [[0.6, 0.1, 0.0], [0.0, 0.5, 0.2], [0.05, 0.0, 0.7]];
    let b = [0.2, -0.1, 0.3];
    let u0 = BurgersInitial::linear(a, b);
    let am = Matrix3::from_row_slice(&a.concat());
    for (t, x) in [(0.0, [1.0, 2.0, 3.0]), (2.5, [-4.0, 0.5, 1.0]), (30.0, [10.0, -10.0, 3.0])] {
        let xv = Vector3::from(x) - t * Vector3::from(b);
        let m = (Matrix3::identity() + t * am).try_inverse().unwrap();
        let expect = am * m * xv + Vector3::from(b);
        let u = u0.eval_u_hat(t, x).unwrap();
        for i in 0..3 {
            assert!((u[i] - expect[i]).abs() < 1e-12 * (1.0 + expect[i].abs()));
        }
    }
}
