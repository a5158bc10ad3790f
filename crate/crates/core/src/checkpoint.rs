//! Binary checkpoints of a [`SymmState`].
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `EPLB` |
//! | 4 | version (u32) |
//! | 4 | dimension d (u32) |
//! | 4 | cells per axis (u32) |
//! | 8 | half box length L (f64) |
//! | 8 | time t (f64) |
//! | 4 + k | parameter block: byte length k (u32) then [`FluidParams`] as JSON |
//! | 8·8·n³ | fields n_i, n_e, v_i¹..v_i³, v_e¹..v_e³ as f64, each in row-major (x slowest) order |

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::model::SymmState;
use crate::params::FluidParams;
use crate::poisson::support_radius;

pub const MAGIC: &[u8; 4] = b"EPLB";
pub const VERSION: u32 = 1;

pub fn write_checkpoint(mut out: impl Write, state: &SymmState, params: &FluidParams) -> Result<()> {
    let spec = state.spec();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(params.dim as u32).to_le_bytes())?;
    out.write_all(&(spec.cells as u32).to_le_bytes())?;
    out.write_all(&spec.half_length.to_le_bytes())?;
    out.write_all(&state.t.to_le_bytes())?;
    let block = serde_json::to_vec(params)?;
    out.write_all(&(block.len() as u32).to_le_bytes())?;
    out.write_all(&block)?;
    let mut buf = Vec::with_capacity(8 * spec.len());
    for (_, field) in state.field_blocks() {
        for c in 0..field.components {
            buf.clear();
            for v in field.component(c) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
    }
    Ok(())
}

fn read_array<const N: usize>(input: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    input
        .read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))?;
    Ok(b)
}

fn read_u32(input: &mut impl Read, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(input, what)?))
}

fn read_f64(input: &mut impl Read, what: &str) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(input, what)?))
}

pub fn read_checkpoint(mut input: impl Read) -> Result<(SymmState, FluidParams)> {
    let magic: [u8; 4] = read_array(&mut input, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut input, "version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dim = read_u32(&mut input, "dimension")? as usize;
    if dim != 3 {
        return Err(Error::Checkpoint(format!("dimension {dim} is not 3")));
    }
    let cells = read_u32(&mut input, "cell count")? as usize;
    let half_length = read_f64(&mut input, "box length")?;
    let t = read_f64(&mut input, "time")?;
    let spec = GridSpec::new(half_length, cells).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let len = read_u32(&mut input, "parameter block length")? as usize;
    let mut block = vec![0u8; len];
    input
        .read_exact(&mut block)
        .map_err(|e| Error::Checkpoint(format!("truncated parameter block: {e}")))?;
    let params: FluidParams = serde_json::from_slice(&block)?;
    if params.dim != dim {
        return Err(Error::Checkpoint(format!("header dimension {dim} disagrees with parameters ({})", params.dim)));
    }
    let mut state = SymmState::vacuum(spec, t);
    let mut bytes = vec![0u8; 8 * spec.len()];
    for field in state.field_blocks_mut() {
        for c in 0..field.components {
            input
                .read_exact(&mut bytes)
                .map_err(|e| Error::Checkpoint(format!("truncated field data: {e}")))?;
            for (dst, src) in field.component_mut(c).iter_mut().zip(bytes.chunks_exact(8)) {
                *dst = f64::from_le_bytes(src.try_into().expect("chunk of 8"));
            }
        }
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after field data".into()));
    }
    state.support_radius_i = support_radius(&spec, &state.n_i.data, 0.0);
    state.support_radius_e = support_radius(&spec, &state.n_e.data, 0.0);
    Ok((state, params))
}

pub fn save(path: impl AsRef<Path>, state: &SymmState, params: &FluidParams) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, state, params)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(SymmState, FluidParams)> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
