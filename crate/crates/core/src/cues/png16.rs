//! Lossless single-channel PNG I/O for masks and quantized depth.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma};

use crate::error::{Error, Result};

/// Reads a grayscale PNG without rescaling sample values. 8-bit files are widened as-is.
pub fn read_gray16(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u16>)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let image = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    let (width, height) = (image.width() as usize, image.height() as usize);
    let data = match image {
        DynamicImage::ImageLuma16(buf) => buf.into_raw(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
        other => {
            return Err(Error::malformed(
                path,
                format!("expected single-channel image, found {:?}", other.color()),
            ))
        }
    };
    Ok((width, height, data))
}

pub fn write_gray16(path: impl AsRef<Path>, width: usize, height: usize, data: &[u16]) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, data.to_vec()).ok_or_else(|| {
            Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} image",
                data.len()
            ))
        })?;
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::malformed(path, format!("png encode failed: {other}")),
    })
}
