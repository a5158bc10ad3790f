//! Electron limit with the exact transported ion background, checked
//! against the recombined equations.

use eplb::burgers::BurgersInitial;
use eplb::grid::GridSpec;
use eplb::limit::{ion_density_exact, recombined_residual, ExactIonDensity};
use eplb::model::{DensityKind, DensityProfile, SymmState};
use eplb::params::FluidParams;
use eplb::solver::{BipolarSolver, SolverConfig};

fn main() -> eplb::error::Result<()> {
    let spec = GridSpec::new(2.0, 24)?;
    let params = FluidParams::default();
    let ion = DensityProfile {
        kind: DensityKind::SoundSpeedBump,
        amplitude: 0.1,
        width: 1.0,
        center: [0.0; 3],
    };
    let electron = DensityProfile { amplitude: 0.08, width: 0.9, ..ion };
    let flow = BurgersInitial::scaled_identity(0.5);

    let x = [0.2, 0.1, -0.3];
    let n = ion_density_exact(1.0, x, |y| ion.n(y, &params.ion), &flow, &params.ion)?;
    println!("transported ion n at t = 1, x = {x:?}: {n:.6e}");

    let background = ExactIonDensity::new(ion, flow.clone(), params.ion);
    let solver = BipolarSolver::new(spec, params.clone(), SolverConfig::new(0.3), flow.clone(), flow)?
        .with_ion_background(Box::new(background));
    let initial = SymmState::at_rest(ion.sample_n(&spec, &params.ion), electron.sample_n(&spec, &params.electron), 0.0)?;
    let out = solver.run(initial)?;
    let (density, momentum) = recombined_residual(&solver, &out.state)?;
    println!("{} steps to t = {:.3}", out.steps, out.state.t);
    println!("recombined residuals: density {density:.3e}, momentum {momentum:.3e}");
    Ok(())
}
