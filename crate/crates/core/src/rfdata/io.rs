//! `UBF1` binary container for RF cubes and channel masks.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "UBF1" | u32 version | u8 kind | u32 L | u32 N | u32 channels
//!        | 11 x f64 probe scalars | payload
//! ```
//!
//! The payload is `f32` samples in `(scanline, depth, channel)` order for
//! cubes, or one `u8` (0/1) per entry for masks, whose dims are
//! `(1, rows, channels)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use super::{ChannelMask, CubeKind, ProbeConfig, RfCube};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UBF1";
pub const VERSION: u32 = 1;
const MASK_KIND: u8 = 3;
const PROBE_SCALARS: usize = 11;
/// Size in bytes of everything before the payload.
pub const HEADER_LEN: usize = 4 + 4 + 1 + 3 * 4 + PROBE_SCALARS * 8;

fn probe_scalars(p: &ProbeConfig) -> [f64; PROBE_SCALARS] {
    [
        p.num_elements as f64,
        p.num_tx as f64,
        p.num_scanlines as f64,
        p.num_rx as f64,
        p.pitch,
        p.sampling_freq,
        p.center_freq,
        p.sound_speed,
        p.axial_min,
        p.axial_max,
        p.focal_depth,
    ]
}

fn probe_from_scalars(s: &[f64; PROBE_SCALARS]) -> Result<ProbeConfig> {
    let count = |v: f64, name: &str| -> Result<usize> {
        if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(Error::Format(format!("probe field {name} is not a count: {v}")))
        }
    };
    Ok(ProbeConfig {
        num_elements: count(s[0], "num_elements")?,
        num_tx: count(s[1], "num_tx")?,
        num_scanlines: count(s[2], "num_scanlines")?,
        num_rx: count(s[3], "num_rx")?,
        pitch: s[4],
        sampling_freq: s[5],
        center_freq: s[6],
        sound_speed: s[7],
        axial_min: s[8],
        axial_max: s[9],
        focal_depth: s[10],
    })
}

fn dim_u32(v: usize, name: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Size(format!("{name} = {v} does not fit in u32")))
}

fn write_header<W: Write>(
    w: &mut W,
    kind: u8,
    dims: (usize, usize, usize),
    probe: &ProbeConfig,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[kind])?;
    w.write_all(&dim_u32(dims.0, "L")?.to_le_bytes())?;
    w.write_all(&dim_u32(dims.1, "N")?.to_le_bytes())?;
    w.write_all(&dim_u32(dims.2, "channels")?.to_le_bytes())?;
    for v in probe_scalars(probe) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Header {
    kind: u8,
    dims: (usize, usize, usize),
    probe: ProbeConfig,
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected UBF1")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported UBF1 version {version}")));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let l = read_u32(r)? as usize;
    let n = read_u32(r)? as usize;
    let c = read_u32(r)? as usize;
    let mut scalars = [0f64; PROBE_SCALARS];
    for s in scalars.iter_mut() {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        *s = f64::from_le_bytes(b);
    }
    Ok(Header {
        kind: kind[0],
        dims: (l, n, c),
        probe: probe_from_scalars(&scalars)?,
    })
}

fn payload_len(dims: (usize, usize, usize), elem: usize) -> Result<usize> {
    dims.0
        .checked_mul(dims.1)
        .and_then(|v| v.checked_mul(dims.2))
        .and_then(|v| v.checked_mul(elem))
        .ok_or_else(|| Error::Size(format!("dims {dims:?} overflow the address space")))
}

/// Reads exactly `len` payload bytes and rejects trailing data.
fn read_payload<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::Size(format!(
            "payload truncated: expected {len} bytes, found {}",
            buf.len()
        )));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Size("trailing bytes after payload".into()));
    }
    Ok(buf)
}

pub fn write_cube(cube: &RfCube, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    payload_len(cube.data.dim(), 4)?;
    write_header(&mut w, cube.kind.code(), cube.data.dim(), &cube.probe)?;
    for v in cube.data.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<RfCube> {
    let mut r = BufReader::new(File::open(path)?);
    let h = read_header(&mut r)?;
    let kind = CubeKind::from_code(h.kind)
        .ok_or_else(|| Error::Format(format!("kind byte {} is not a cube", h.kind)))?;
    let bytes = read_payload(&mut r, payload_len(h.dims, 4)?)?;
    let samples: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let data = Array3::from_shape_vec(h.dims, samples)
        .map_err(|e| Error::Size(format!("payload does not match dims: {e}")))?;
    h.probe.validate()?;
    RfCube::new(kind, h.probe, data)
}

/// Writes a mask as a `UBF1` file of kind `Mask`. The probe block records the
/// geometry the mask was generated for.
pub fn write_mask(mask: &ChannelMask, probe: &ProbeConfig, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dims = (1, mask.rows(), mask.channels());
    write_header(&mut w, MASK_KIND, dims, probe)?;
    let bytes: Vec<u8> = mask.raw().iter().map(|&a| a as u8).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<ChannelMask> {
    let mut r = BufReader::new(File::open(path)?);
    let h = read_header(&mut r)?;
    if h.kind != MASK_KIND {
        return Err(Error::Format(format!("kind byte {} is not a mask", h.kind)));
    }
    if h.dims.0 != 1 {
        return Err(Error::Format("mask files must have L = 1".into()));
    }
    let bytes = read_payload(&mut r, payload_len(h.dims, 1)?)?;
    if let Some(b) = bytes.iter().find(|&&b| b > 1) {
        return Err(Error::Format(format!("mask entry {b} is not 0 or 1")));
    }
    let active = Array2::from_shape_vec((h.dims.1, h.dims.2), bytes.iter().map(|&b| b == 1).collect())
        .map_err(|e| Error::Size(e.to_string()))?;
    ChannelMask::new(active)
}
