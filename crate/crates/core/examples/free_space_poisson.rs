//! Free-space Poisson solve against the direct quadrature oracle and Gauss's law.

use eplb::grid::GridSpec;
use eplb::model::{DensityKind, DensityProfile};
use eplb::params::FluidParams;
use eplb::poisson::{rhs_from_densities, sphere_flux, FreeSpacePoisson};

fn main() -> eplb::error::Result<()> {
    let spec = GridSpec::new(2.0, 32)?;
    let params = FluidParams::default();
    let ion = DensityProfile {
        kind: DensityKind::SoundSpeedBump,
        amplitude: 0.6,
        width: 1.2,
        center: [0.1, 0.0, 0.0],
    };
    let n_i = ion.sample_n(&spec, &params.ion);
    let n_e = vec![0.0; spec.len()];
    let rhs = rhs_from_densities(&n_i.data, &n_e, &spec, &params)?;

    let solver = FreeSpacePoisson::new(spec);
    let sol = solver.solve_rhs(&rhs)?;
    let probes = [[16, 16, 16], [4, 20, 9], [27, 3, 14]];
    let oracle = solver.oracle_quadrature(&rhs, &probes);
    for (c, o) in probes.iter().zip(&oracle) {
        let v = sol.phi.data[spec.index(c[0], c[1], c[2])];
        println!("cell {c:?}: convolution {v:.12e}, oracle {o:.12e}");
    }

    let charge: f64 = rhs.iter().sum::<f64>() * spec.cell_volume();
    let flux = sphere_flux(&sol.grad_phi, 1.6, 32);
    println!("charge {charge:.6e}, flux through r = 1.6: {flux:.6e}");
    Ok(())
}
