//! Exact reference flow: foot points, the K-field and decay of the Hessian.

use eplb::burgers::{decay_norms_u_hat, k_field_max, BurgersInitial, Perturbation, ProfileKind};
use eplb::diagnostics::fit_decay_rate;
use eplb::grid::GridSpec;

fn main() -> eplb::error::Result<()> {
    let spec = GridSpec::new(2.0, 24)?;
    let linear = BurgersInitial::scaled_identity(1.0);
    for t in [0.0, 1.0, 5.0, 20.0] {
        println!("u0 = x, t = {t:>4}: max |K| = {:e}", k_field_max(&linear, &spec, t)?);
    }

    let u0 = BurgersInitial::scaled_identity(1.0).with_perturbation(Perturbation {
        profile: ProfileKind::BumpSine,
        amplitude: 0.1,
        width: 1.0,
        center: [0.1, -0.2, 0.05],
    });
    println!("kappa margin {:.3}", u0.check_kappa(spec.points(), 1e-6)?);
    let x = [0.3, -0.4, 0.2];
    let sol = u0.eval_x0(3.0, x)?;
    println!("foot point of {x:?} at t = 3: {:.5?} ({} Newton steps)", sol.x0, sol.newton_iters);

    let ts: Vec<f64> = (0..10).map(|i| 2f64.powf(i as f64 * 51f64.log2() / 9.0) - 1.0).collect();
    let rows = decay_norms_u_hat(&u0, &ts, &[2], &spec)?;
    let hess: Vec<f64> = rows.iter().map(|r| r.hess_inf).collect();
    let l2: Vec<f64> = rows.iter().map(|r| r.hdot[0]).collect();
    let window = (ts[0], ts[ts.len() - 1]);
    println!("slope of |D2 u|_inf: {:.3}", fit_decay_rate(&ts, &hess, window)?.slope);
    println!("slope of |D2 u|_2:   {:.3}", fit_decay_rate(&ts, &l2, window)?.slope);
    Ok(())
}
