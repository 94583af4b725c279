//! The `.qmat` binary container for Q4 matrices.
//!
//! Layout (little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `QMAT`                  |
//! | 4      | 4    | version, u32 = 1              |
//! | 8      | 8    | rows, u64                     |
//! | 16     | 8    | cols, u64                     |
//! | 24     | 1    | block kind, u8 (0 = Q4_0)     |
//! | 25     | 7    | reserved, zero                |
//! | 32     | ...  | `rows * cols / 32` blocks     |
//!
//! Each block is an `f32` scale followed by 16 bytes of packed codes.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::quant::{BlockQ4, QuantMatrixQ4, BLOCK_SIZE};

pub const MAGIC: &[u8; 4] = b"QMAT";
pub const VERSION: u32 = 1;
pub const BLOCK_KIND_Q4_0: u8 = 0;
pub const HEADER_LEN: usize = 32;
pub const BLOCK_BYTES: usize = 4 + BLOCK_SIZE / 2;

pub fn encode(m: &QuantMatrixQ4) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.blocks().len() * BLOCK_BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    out.push(BLOCK_KIND_Q4_0);
    out.extend_from_slice(&[0u8; 7]);
    for b in m.blocks() {
        out.extend_from_slice(&b.scale().to_le_bytes());
        out.extend_from_slice(b.packed());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<QuantMatrixQ4> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "qmat truncated: {} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad qmat magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported qmat version {version}")));
    }
    let rows = usize::try_from(u64_at(8)).map_err(|_| Error::Format("rows overflow".into()))?;
    let cols = usize::try_from(u64_at(16)).map_err(|_| Error::Format("cols overflow".into()))?;
    if bytes[24] != BLOCK_KIND_Q4_0 {
        return Err(Error::Format(format!("unsupported block kind {}", bytes[24])));
    }
    if bytes[25..32].iter().any(|&b| b != 0) {
        return Err(Error::Format("reserved header bytes are not zero".into()));
    }
    if rows == 0 || cols == 0 || cols % BLOCK_SIZE != 0 {
        return Err(Error::Format(format!("invalid qmat shape {rows}x{cols}")));
    }
    let n_blocks = rows
        .checked_mul(cols / BLOCK_SIZE)
        .ok_or_else(|| Error::Format("block count overflow".into()))?;
    let expected = n_blocks
        .checked_mul(BLOCK_BYTES)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format("payload size overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "qmat payload is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let blocks = bytes[HEADER_LEN..]
        .chunks_exact(BLOCK_BYTES)
        .map(|chunk| {
            let scale = f32::from_le_bytes(chunk[0..4].try_into().unwrap());
            BlockQ4::from_packed(scale, chunk[4..].try_into().unwrap())
        })
        .collect::<Result<Vec<_>>>()?;
    QuantMatrixQ4::from_blocks(rows, cols, blocks)
}

pub fn write_file(path: impl AsRef<Path>, m: &QuantMatrixQ4) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(m)).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: impl AsRef<Path>) -> Result<QuantMatrixQ4> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// The checked-in golden matrix: 2x64, built from a closed-form pattern so
/// it does not depend on any random number generator.
pub fn golden_matrix() -> QuantMatrixQ4 {
    let values: Vec<f32> = (0..2 * 64)
        .map(|i| {
            let r = i / 64;
            let c = i % 64;
            (((c * 7 + r * 3) % 23) as f32 - 11.0) * if r == 0 { 0.125 } else { 1.5 }
        })
        .collect();
    QuantMatrixQ4::quantize(2, 64, &values).expect("golden pattern is valid")
}

/// Golden `.qmat` bytes as checked into the repository.
pub const GOLDEN_QMAT: &[u8] = include_bytes!("../tests/data/golden.qmat");
