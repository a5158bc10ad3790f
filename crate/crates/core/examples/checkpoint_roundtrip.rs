//! Writes a state to the binary checkpoint format and reads it back.

use eplb::checkpoint::{read_checkpoint, write_checkpoint};
use eplb::grid::GridSpec;
use eplb::model::{DensityProfile, SymmState};
use eplb::params::FluidParams;

fn main() -> eplb::error::Result<()> {
    let spec = GridSpec::new(2.0, 16)?;
    let params = FluidParams::default().with_epsilon(0.25);
    let n = DensityProfile::bump(0.1, 1.2).sample_n(&spec, &params.ion);
    let state = SymmState::at_rest(n.clone(), n, 0.75)?;

    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &state, &params)?;
    let (back, p) = read_checkpoint(bytes.as_slice())?;
    println!("{} bytes, t = {}, epsilon = {}", bytes.len(), back.t, p.epsilon);
    println!("max difference after roundtrip: {:e}", state.max_diff(&back));
    Ok(())
}
