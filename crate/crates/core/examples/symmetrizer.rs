//! Flux matrices of the symmetrized system and their closed-form spectrum.

use eplb::model::{assemble_flux_matrix, flux_eigenvalues};
use eplb::params::{FluidParams, Species};

fn main() {
    let params = FluidParams::default().with_epsilon(0.3);
    let w = [0.2, 0.05, -0.1, 0.3];
    let u_hat = [0.4, 0.0, -0.2];
    for species in Species::BOTH {
        println!("{species}");
        for axis in 0..3 {
            let a = assemble_flux_matrix(w, u_hat, &params, species, axis);
            let asym = (a - a.transpose()).abs().max();
            let mut numeric: Vec<f64> = a.symmetric_eigen().eigenvalues.iter().copied().collect();
            numeric.sort_by(f64::total_cmp);
            let mut closed = flux_eigenvalues(w, u_hat, &params, species, axis).to_vec();
            closed.sort_by(f64::total_cmp);
            let gap = numeric.iter().zip(&closed).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            println!("  axis {axis}: |A - A^T| = {asym:e}, eigenvalues {closed:.4?}, mismatch {gap:e}");
        }
    }
}
