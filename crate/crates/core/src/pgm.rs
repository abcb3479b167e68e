//! Binary 8-bit portable graymap (`P5`) input and output for single grids.
//!
//! Raster rows follow grid storage: the image is `n2` pixels wide and `n1`
//! pixels tall. Pixel `p` stands for the value `p · full_scale / 255`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::encoding::Grid;
use crate::error::{Error, Result};

/// Full scale of encoding channels: the largest distance in the unit square.
pub const CHANNEL_FULL_SCALE: f64 = std::f64::consts::SQRT_2;

pub fn encode_pgm(grid: &Grid, full_scale: f64) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.n2, grid.n1).into_bytes();
    out.extend(
        grid.values
            .iter()
            .map(|&v| (255.0 * v as f64 / full_scale).round().clamp(0.0, 255.0) as u8),
    );
    out
}

pub fn decode_pgm(bytes: &[u8], full_scale: f64) -> Result<Grid> {
    let mut pos = 0;
    let mut fields = [0usize; 3];
    if bytes.get(..2) != Some(b"P5") {
        return Err(Error::Format("missing P5 magic".into()));
    }
    pos += 2;
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let begin = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[begin..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad header number".into()))?;
    }
    // exactly one whitespace byte before the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Format("header not terminated".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if !(1..=255).contains(&maxval) {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    if width < 2 || height < 2 {
        return Err(Error::Format(format!("image {width}x{height} too small")));
    }
    let raster = &bytes[pos..];
    if raster.len() != width * height {
        return Err(Error::Format(format!("expected {} raster bytes, found {}", width * height, raster.len())));
    }
    let values = raster.iter().map(|&p| (p as f64 * full_scale / maxval as f64) as f32).collect();
    Grid::from_values(height, width, values)
}

pub fn write_pgm(grid: &Grid, path: impl AsRef<Path>, full_scale: f64) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(grid, full_scale))?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>, full_scale: f64) -> Result<Grid> {
    decode_pgm(&fs::read(path)?, full_scale)
}

/// Writes an encoding channel with values in `[0, √2]`.
pub fn write_image(grid: &Grid, path: impl AsRef<Path>) -> Result<()> {
    write_pgm(grid, path, CHANNEL_FULL_SCALE)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Grid> {
    read_pgm(path, CHANNEL_FULL_SCALE)
}
