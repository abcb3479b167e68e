//! `BSPW` weight files: the magic `BSPW`, then `version`, `depth`,
//! `base_channels` and the tensor count as little-endian `u32`; each tensor is
//! four `u32` dims followed by its `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::Tensor4;
use super::unet::UNetParams;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BSPW";
pub const VERSION: u32 = 1;

pub fn write_checkpoint(params: &UNetParams, w: &mut impl Write) -> Result<()> {
    params.validate()?;
    w.write_all(MAGIC)?;
    for v in [VERSION, params.depth as u32, params.base_channels as u32, params.tensors.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for t in &params.tensors {
        for d in t.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(params: &UNetParams, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("checkpoint truncated".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<UNetParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let depth = read_u32(r)? as usize;
    let base_channels = read_u32(r)? as usize;
    let count = read_u32(r)? as usize;
    let layout = UNetParams::layout(depth.min(16), base_channels.min(1 << 16));
    if depth > 16 || count != layout.len() {
        return Err(Error::ShapeMismatch(format!("{count} tensors do not match a depth-{depth} U-Net")));
    }
    let mut tensors = Vec::with_capacity(count);
    for expect in layout {
        let mut shape = [0usize; 4];
        for d in shape.iter_mut() {
            *d = read_u32(r)? as usize;
        }
        if shape != expect {
            return Err(Error::ShapeMismatch(format!("tensor shape {shape:?}, architecture needs {expect:?}")));
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor4::from_vec(shape, data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(UNetParams { depth, base_channels, tensors })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<UNetParams> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
