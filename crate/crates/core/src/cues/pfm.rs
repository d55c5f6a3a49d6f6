//! Grayscale portable float map (`Pf`).
//!
//! Header is three whitespace-separated ASCII tokens after the `Pf` tag:
//! width, height and a scale whose sign encodes endianness (negative means
//! little-endian). Exactly one whitespace byte separates the header from the
//! raster, which is stored bottom row first.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Single-channel `f32` raster in top-to-bottom row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatGrid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

const MAX_DIM: usize = 1 << 15;

pub fn encode_pfm(grid: &FloatGrid) -> Vec<u8> {
    let header = format!("Pf\n{} {}\n-1.0\n", grid.width, grid.height);
    let mut out = Vec::with_capacity(header.len() + grid.data.len() * 4);
    out.extend_from_slice(header.as_bytes());
    for row in (0..grid.height).rev() {
        for value in &grid.data[row * grid.width..(row + 1) * grid.width] {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    out
}

/// Splits the next whitespace-delimited ASCII token off `bytes[*pos..]`.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return None;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<FloatGrid> {
    let mut pos = 0;
    match next_token(bytes, &mut pos) {
        Some("Pf") => {}
        Some("PF") => return Err(Error::malformed(path, "color PFM where grayscale expected")),
        _ => return Err(Error::malformed(path, "missing Pf tag")),
    }
    let mut dim = |name: &str| -> Result<usize> {
        let token = next_token(bytes, &mut pos)
            .ok_or_else(|| Error::malformed(path, format!("missing {name}")))?;
        match token.parse::<usize>() {
            Ok(v) if (1..=MAX_DIM).contains(&v) => Ok(v),
            _ => Err(Error::malformed(path, format!("invalid {name} {token:?}"))),
        }
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let scale: f64 = next_token(bytes, &mut pos)
        .and_then(|t| t.parse().ok())
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::malformed(path, "invalid scale"))?;
    let little_endian = scale < 0.0;
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::malformed(path, "missing header terminator"));
    }
    pos += 1;

    let raster = &bytes[pos..];
    let expected = width * height * 4;
    if raster.len() != expected {
        return Err(Error::malformed(
            path,
            format!("expected {expected} raster bytes, found {}", raster.len()),
        ));
    }
    let mut data = vec![0.0f32; width * height];
    for (i, chunk) in raster.chunks_exact(4).enumerate() {
        let word = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let value = if little_endian {
            f32::from_le_bytes(word)
        } else {
            f32::from_be_bytes(word)
        };
        let (file_row, col) = (i / width, i % width);
        data[(height - 1 - file_row) * width + col] = value;
    }
    Ok(FloatGrid {
        width,
        height,
        data,
    })
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<FloatGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}

pub fn write_pfm(path: impl AsRef<Path>, grid: &FloatGrid) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(grid)).map_err(|e| Error::io(path, e))
}
