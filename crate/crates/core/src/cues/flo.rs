//! Middlebury `.flo` container.
//!
//! Layout (little-endian): `f32` magic `202021.25`, `i32` width, `i32` height,
//! then `width * height` interleaved `(u, v)` pairs of `f32`, row-major.

use std::fs;
use std::path::Path;

use super::FlowField;
use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER_LEN: usize = 12;

/// Upper bound on either dimension; guards against absurd allocations from corrupt headers.
const MAX_DIM: i32 = 1 << 15;

pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + flow.data().len() * 4);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for value in flow.data() {
        out.extend_from_slice(&value.to_le_bytes());
    }
    out
}

pub fn decode_flow(bytes: &[u8], path: &Path) -> Result<FlowField> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::malformed(path, "truncated header"));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let magic = f32::from_le_bytes(word(0));
    if magic.to_bits() != FLO_MAGIC.to_bits() {
        return Err(Error::malformed(path, "bad magic tag"));
    }
    let width = i32::from_le_bytes(word(4));
    let height = i32::from_le_bytes(word(8));
    if !(1..=MAX_DIM).contains(&width) || !(1..=MAX_DIM).contains(&height) {
        return Err(Error::malformed(
            path,
            format!("invalid dimensions {width}x{height}"),
        ));
    }
    let (width, height) = (width as usize, height as usize);
    let count = width * height * 2;
    let expected = HEADER_LEN + count * 4;
    if bytes.len() != expected {
        return Err(Error::malformed(
            path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for (index, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let value = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !value.is_finite() {
            return Err(Error::NonFiniteValue {
                path: path.to_path_buf(),
                index,
            });
        }
        data.push(value);
    }
    FlowField::new(width, height, data)
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flow(&bytes, path)
}

pub fn write_flow(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_flow(flow)).map_err(|e| Error::io(path, e))
}
