//! Binary checkpoint of an [`EncoderState`].
//!
//! Layout (little endian): magic `ASOTCKPT`, `u32` version, four `u64` shape
//! fields (input dim, hidden, output dim, actions), `u64` Adam step count,
//! then the parameters, first and second Adam moments as `f64` tensors in the
//! order `w1, b1, w2, b2, actions`.

use std::fs;
use std::path::Path;

use super::{EncoderState, Params};
use crate::{AsotError, Result};

const MAGIC: &[u8; 8] = b"ASOTCKPT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 * 5;

pub fn encode_checkpoint(state: &EncoderState) -> Vec<u8> {
    let p = &state.params;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [p.d_in(), p.hidden(), p.d_out(), p.n_actions()] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.extend_from_slice(&state.step_count.to_le_bytes());
    for params in [&state.params, &state.adam_m, &state.adam_v] {
        for s in params.slices() {
            for v in s {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<EncoderState> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(AsotError::BadMagic { path: path.to_path_buf() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(AsotError::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(AsotError::UnsupportedVersion { path: path.to_path_buf(), version });
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let dims: Vec<usize> = (0..4).map(|i| u64_at(12 + 8 * i) as usize).collect();
    let step_count = u64_at(44);
    let mut tensors = [
        Params::zeros(dims[0], dims[1], dims[2], dims[3]),
        Params::zeros(dims[0], dims[1], dims[2], dims[3]),
        Params::zeros(dims[0], dims[1], dims[2], dims[3]),
    ];
    let count: usize = tensors[0].slices().iter().map(|s| s.len()).sum::<usize>() * 3;
    let expected = HEADER_LEN + 8 * count;
    if bytes.len() != expected {
        return Err(AsotError::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for t in tensors.iter_mut() {
        for s in t.slices_mut() {
            for v in s.iter_mut() {
                *v = values.next().expect("length checked");
            }
        }
    }
    let [params, adam_m, adam_v] = tensors;
    if !params.is_finite() || !adam_m.is_finite() || !adam_v.is_finite() {
        return Err(AsotError::invalid(format!("{}: checkpoint holds non-finite values", path.display())));
    }
    Ok(EncoderState { params, adam_m, adam_v, step_count })
}

pub fn write_checkpoint(path: impl AsRef<Path>, state: &EncoderState) -> Result<()> {
    crate::data_io::write_file(path, encode_checkpoint(state))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<EncoderState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AsotError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
