//! A short bipolar run with weighted functionals printed per record.

use eplb::burgers::BurgersInitial;
use eplb::diagnostics::ode_inequality_report;
use eplb::grid::GridSpec;
use eplb::model::{DensityKind, DensityProfile, SymmState};
use eplb::params::{FluidParams, Species};
use eplb::solver::{BipolarSolver, SolverConfig};

fn main() -> eplb::error::Result<()> {
    let spec = GridSpec::new(2.0, 24)?;
    let params = FluidParams::default().with_epsilon(0.5);
    let bump = |amplitude, width| DensityProfile {
        kind: DensityKind::SoundSpeedBump,
        amplitude,
        width,
        center: [0.0; 3],
    };
    let n_i = bump(0.1, 1.0).sample_n(&spec, &params.ion);
    let n_e = bump(0.08, 0.9).sample_n(&spec, &params.electron);
    let mut config = SolverConfig::new(0.5);
    config.record_every = 3;
    let flow = BurgersInitial::scaled_identity(0.5);
    let solver = BipolarSolver::new(spec, params, config, flow.clone(), flow)?;
    let out = solver.run(SymmState::at_rest(n_i, n_e, 0.0)?)?;

    println!("{:>8} {:>12} {:>12} {:>12} {:>12}", "t", "Y ion", "Y electron", "R ion", "bound ion");
    for k in 0..out.record.times.len() {
        let i = &out.record.species(Species::Ion)[k];
        let e = &out.record.species(Species::Electron)[k];
        println!(
            "{:>8.4} {:>12.5e} {:>12.5e} {:>12.4} {:>12.4}",
            out.record.times[k], i.weighted.y, e.weighted.y, i.support_radius, i.support_bound
        );
    }
    for species in Species::BOTH {
        let rows = out.record.species(species);
        let t: Vec<f64> = rows.iter().map(|r| r.norms.t).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.weighted.y).collect();
        let rep = ode_inequality_report(&t, &y, solver.params.decay_a(species), solver.params.law(species).gamma)?;
        println!("{species}: c3 = {:.4}, eta = {:.4}, max Z/Z0 = {:.4}", rep.c3, rep.eta, rep.z_ratio_max);
    }
    if let Some(e) = out.error {
        println!("stopped early: {e}");
    }
    Ok(())
}
