//! Parameter checkpoints as flat binary arrays with a versioned header.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EVOP"
//! 4       4     format version (u32, currently 1)
//! 8       4     vocab_size (u32)
//! 12      4     d_main (u32)
//! 16      4     hidden (u32)
//! 20      4     d_guid (u32)
//! 24      8     temperature (f64)
//! 32      …     E, W_out, G as consecutive f64 arrays, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{PolicyDims, PolicyError, PolicyParameters};

const MAGIC: &[u8; 4] = b"EVOP";
const VERSION: u32 = 1;

pub fn save_params(params: &PolicyParameters, path: &Path) -> Result<(), PolicyError> {
    let mut buf = Vec::with_capacity(32 + params.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [
        params.dims.vocab_size,
        params.dims.d_main,
        params.dims.hidden,
        params.dims.d_guid,
    ] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    buf.extend_from_slice(&params.temperature.to_le_bytes());
    for value in params
        .embed
        .iter()
        .chain(&params.output)
        .chain(&params.guidance_read)
    {
        buf.extend_from_slice(&value.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(&buf).map_err(io_err)
}

pub fn load_params(path: &Path) -> Result<PolicyParameters, PolicyError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(io_err)?
        .read_to_end(&mut bytes)
        .map_err(io_err)?;
    if bytes.len() < 32 || &bytes[0..4] != MAGIC {
        return Err(PolicyError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(PolicyError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let dim_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let dims = PolicyDims {
        vocab_size: dim_at(8),
        d_main: dim_at(12),
        hidden: dim_at(16),
        d_guid: dim_at(20),
    };
    let temperature = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let counts = [
        dims.hidden * dims.d_main,
        dims.vocab_size * dims.hidden,
        dims.vocab_size * dims.d_guid,
    ];
    let total: usize = counts.iter().sum();
    if bytes.len() != 32 + total * 8 {
        return Err(PolicyError::Checkpoint(format!(
            "expected {} bytes of data, found {}",
            total * 8,
            bytes.len() - 32
        )));
    }
    let mut cursor = 32;
    let mut read_array = |count: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(f64::from_le_bytes(bytes[cursor..cursor + 8].try_into().unwrap()));
            cursor += 8;
        }
        out
    };
    Ok(PolicyParameters {
        dims,
        embed: read_array(counts[0]),
        output: read_array(counts[1]),
        guidance_read: read_array(counts[2]),
        temperature,
    })
}

fn io_err(e: std::io::Error) -> PolicyError {
    PolicyError::Checkpoint(e.to_string())
}
