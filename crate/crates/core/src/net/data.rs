//! Training samples, the `UBFD` sample archive and frame inference.
//!
//! A network input is the slab of `planes` consecutive depth planes around
//! depth `n` (edge planes replicated), laid out `[plane x scanline x channel]`.
//! Each slab is divided by the RMS of the non-zero (compensated) entries in
//! a window of depth rows around `n` and the network output multiplied back,
//! which makes the learned map equivariant to the echo amplitude that falls
//! with depth. The window spans the support of the Hilbert filter, so the
//! quadrature target stays bounded relative to the scale even where a slab
//! itself is nearly empty (inside cysts).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;

use super::model::{Mode, NetworkParams};
use crate::error::{Error, Result};
use crate::par;
use crate::rfdata::{CubeKind, IqImage, RfCube};
use crate::subsample::{mask_row, SamplingScheme};

pub const DATASET_MAGIC: &[u8; 4] = b"UBFD";
/// Half-width, in depth rows, of the normalisation window.
pub const SCALE_HALF_WINDOW: usize = 31;
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// `[planes x te x rx]`, already normalised.
    pub input: Vec<f64>,
    /// `[2 x te]`: I row then Q row, normalised by the same scale.
    pub target: Vec<f64>,
    pub te: usize,
    pub planes: usize,
    /// Active channels of the centre plane.
    pub keep: usize,
    /// Mask rows of every plane, `[planes x rx]`.
    pub mask: Vec<bool>,
    /// Normalisation applied to input and target.
    pub scale: f64,
}

fn plane_index(n: usize, p: usize, planes: usize, depth: usize) -> usize {
    let half = (planes / 2) as i64;
    (n as i64 + p as i64 - half).clamp(0, depth as i64 - 1) as usize
}

/// Raw slab `[planes x L x C]` around depth `n` of an aperture cube.
pub fn slab(z: &RfCube, n: usize, planes: usize) -> Vec<f64> {
    let (lines, depth, channels) = z.data.dim();
    let mut out = Vec::with_capacity(planes * lines * channels);
    for p in 0..planes {
        let d = plane_index(n, p, planes, depth);
        for l in 0..lines {
            for c in 0..channels {
                out.push(z.data[[l, d, c]] as f64);
            }
        }
    }
    out
}

/// Scales every plane by `C / J`, `J` its active channel count, so that the
/// receive-axis mean of a masked plane matches the masked DAS output.
fn compensate(x: &mut [f64], mask: &[bool], planes: usize, lines: usize, channels: usize) {
    for p in 0..planes {
        let active = mask[p * channels..(p + 1) * channels].iter().filter(|&&a| a).count();
        if active == 0 || active == channels {
            continue;
        }
        let g = channels as f64 / active as f64;
        x[p * lines * channels..(p + 1) * lines * channels].iter_mut().for_each(|v| *v *= g);
    }
}

/// Mask rows of the planes around depth `n`, `[planes x C]`; all active
/// without an attached mask.
fn slab_mask(z: &RfCube, n: usize, planes: usize) -> Vec<bool> {
    let (_, depth, channels) = z.data.dim();
    let mut out = Vec::with_capacity(planes * channels);
    for p in 0..planes {
        let d = plane_index(n, p, planes, depth);
        match &z.mask {
            Some(m) => out.extend(m.row(d).iter().copied()),
            None => out.extend(std::iter::repeat_n(true, channels)),
        }
    }
    out
}

/// Network input around depth `n` before normalisation: the slab with
/// masked planes compensated for their missing channels.
pub fn masked_slab(z: &RfCube, n: usize, planes: usize) -> Vec<f64> {
    let (lines, _, channels) = z.data.dim();
    let mut x = slab(z, n, planes);
    compensate(&mut x, &slab_mask(z, n, planes), planes, lines, channels);
    x
}

fn window_scale(z: &RfCube, n: usize, row_mask: impl Fn(usize) -> Result<Vec<bool>>) -> Result<f64> {
    let (lines, depth, channels) = z.data.dim();
    let lo = n.saturating_sub(SCALE_HALF_WINDOW);
    let hi = (n + SCALE_HALF_WINDOW + 1).min(depth);
    let (mut s, mut k) = (0.0, 0usize);
    for d in lo..hi {
        let m = row_mask(d)?;
        let active = m.iter().filter(|&&a| a).count();
        if active == 0 {
            continue;
        }
        let g = channels as f64 / active as f64;
        for l in 0..lines {
            for (c, _) in m.iter().enumerate().filter(|(_, a)| **a) {
                let v = z.data[[l, d, c]] as f64;
                if v != 0.0 {
                    s += v * v * g * g;
                    k += 1;
                }
            }
        }
    }
    Ok(if k == 0 { 0.0 } else { (s / k as f64).sqrt() })
}

/// Normalisation scale of depth `n` for a (masked) aperture cube; zero when
/// the window holds no signal.
pub fn depth_scale(z: &RfCube, n: usize) -> f64 {
    let channels = z.channels();
    window_scale(z, n, |d| {
        Ok(match &z.mask {
            Some(m) => m.row(d).to_vec(),
            None => vec![true; channels],
        })
    })
    .expect("mask rows are infallible")
}

fn to_f32_precision(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

/// Builds one sample from a full-data aperture cube: the slab around depth
/// `n` masked with the rows `scheme` gives those depths, cropped to
/// scanlines `te_start..te_start + te`, and the matching IQ target row.
/// Returns `None` when the masked slab is all zero.
pub fn extract_sample(
    full: &RfCube,
    target: &IqImage,
    n: usize,
    planes: usize,
    scheme: &SamplingScheme,
    te_start: usize,
    te: usize,
) -> Result<Option<TrainingSample>> {
    if full.kind != CubeKind::Aperture {
        return Err(Error::invalid("training slabs come from aperture cubes"));
    }
    let (lines, depth, channels) = full.data.dim();
    if target.dim() != (lines, depth) {
        return Err(Error::dims("target image does not match the cube"));
    }
    if te_start + te > lines || n >= depth || planes == 0 {
        return Err(Error::invalid("sample window lies outside the frame"));
    }
    let mut mask = Vec::with_capacity(planes * channels);
    for p in 0..planes {
        mask.extend(mask_row(scheme, channels, plane_index(n, p, planes, depth))?);
    }
    let mut x = slab(full, n, planes);
    for p in 0..planes {
        for l in 0..lines {
            for c in 0..channels {
                if !mask[p * channels + c] {
                    x[(p * lines + l) * channels + c] = 0.0;
                }
            }
        }
    }
    compensate(&mut x, &mask, planes, lines, channels);
    let scale = window_scale(full, n, |d| mask_row(scheme, channels, d))?;
    if scale == 0.0 || x.iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    let mut input = Vec::with_capacity(planes * te * channels);
    for p in 0..planes {
        let start = (p * lines + te_start) * channels;
        input.extend(x[start..start + te * channels].iter().map(|v| v / scale));
    }
    let mut tgt = Vec::with_capacity(2 * te);
    tgt.extend((te_start..te_start + te).map(|l| target.i_part[[l, n]] / scale));
    tgt.extend((te_start..te_start + te).map(|l| target.q_part[[l, n]] / scale));
    to_f32_precision(&mut input);
    to_f32_precision(&mut tgt);
    let centre = planes / 2;
    let keep = mask[centre * channels..(centre + 1) * channels].iter().filter(|&&a| a).count();
    Ok(Some(TrainingSample {
        input,
        target: tgt,
        te,
        planes,
        keep,
        mask,
        scale,
    }))
}

/// Runs the network over every depth row in `rows` of a (masked) aperture
/// cube; rows outside stay zero.
pub fn infer_frame(params: &NetworkParams, z: &RfCube, rows: Option<Range<usize>>) -> Result<IqImage> {
    if z.kind != CubeKind::Aperture {
        return Err(Error::invalid("inference runs on aperture cubes"));
    }
    let (lines, depth, channels) = z.data.dim();
    if channels != params.arch.rx {
        return Err(Error::dims(format!(
            "cube has {channels} receive channels, network expects {}",
            params.arch.rx
        )));
    }
    if params.arch.out_channels != 2 {
        return Err(Error::invalid("frame inference needs a two-channel (I, Q) network"));
    }
    let rows = rows.unwrap_or(0..depth);
    if rows.end > depth {
        return Err(Error::dims("inference rows exceed the cube depth"));
    }
    let planes = params.arch.in_channels;
    const CHUNK: usize = 16;
    let starts: Vec<usize> = rows.clone().step_by(CHUNK).collect();
    let chunks = par::map_range(starts.len(), |k| -> Result<Vec<(usize, Vec<f64>)>> {
        let lo = starts[k];
        let hi = (lo + CHUNK).min(rows.end);
        let mut x = Vec::new();
        let mut scales = Vec::new();
        for n in lo..hi {
            let s = masked_slab(z, n, planes);
            let sc = depth_scale(z, n);
            scales.push(sc);
            let inv = if sc > 0.0 { 1.0 / sc } else { 0.0 };
            x.extend(s.iter().map(|v| v * inv));
        }
        let out = params.forward_batch(&x, hi - lo, lines, Mode::Infer)?;
        Ok((lo..hi)
            .zip(out.chunks_exact(2 * lines))
            .zip(&scales)
            .map(|((n, o), sc)| (n, o.iter().map(|v| v * sc).collect()))
            .collect())
    });
    let mut i_part = Array2::zeros((lines, depth));
    let mut q_part = Array2::zeros((lines, depth));
    for chunk in chunks {
        for (n, o) in chunk? {
            for l in 0..lines {
                i_part[[l, n]] = o[l];
                q_part[[l, n]] = o[lines + l];
            }
        }
    }
    IqImage::new(i_part, q_part)
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Size(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Size("dataset archive truncated".into()))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Writes samples sharing one shape: header `UBFD | version | count | planes
/// | te | rx`, then per sample `keep (u32) | scale (f64) | mask (u8) | input
/// (f32) | target (f32)`.
pub fn write_dataset(samples: &[TrainingSample], path: impl AsRef<Path>) -> Result<()> {
    let first = samples.first().ok_or_else(|| Error::invalid("cannot write an empty dataset"))?;
    let te = first.te;
    let planes = first.planes;
    if planes == 0 || first.mask.len() % planes != 0 {
        return Err(Error::dims("sample mask does not match its plane count"));
    }
    let rx = first.mask.len() / planes;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    put_u32(&mut w, samples.len())?;
    put_u32(&mut w, planes)?;
    put_u32(&mut w, te)?;
    put_u32(&mut w, rx)?;
    for s in samples {
        if s.planes != planes || s.te != te || s.mask.len() != planes * rx || s.input.len() != planes * te * rx || s.target.len() != 2 * te {
            return Err(Error::dims("dataset samples differ in shape"));
        }
        put_u32(&mut w, s.keep)?;
        w.write_all(&s.scale.to_le_bytes())?;
        let m: Vec<u8> = s.mask.iter().map(|&a| a as u8).collect();
        w.write_all(&m)?;
        for v in s.input.iter().chain(&s.target) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<TrainingSample>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format("bad dataset magic, expected UBFD".into()));
    }
    let version = get_u32(&mut r)?;
    if version != DATASET_VERSION as usize {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let count = get_u32(&mut r)?;
    let planes = get_u32(&mut r)?;
    let te = get_u32(&mut r)?;
    let rx = get_u32(&mut r)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let keep = get_u32(&mut r)?;
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let scale = f64::from_le_bytes(b);
        let mut m = vec![0u8; planes * rx];
        r.read_exact(&mut m)
            .map_err(|_| Error::Size("dataset archive truncated".into()))?;
        let input = get_f32s(&mut r, planes * te * rx)?;
        let target = get_f32s(&mut r, 2 * te)?;
        out.push(TrainingSample {
            input,
            target,
            te,
            planes,
            keep,
            mask: m.iter().map(|&v| v == 1).collect(),
            scale,
        });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Size("trailing bytes after dataset".into()));
    }
    Ok(out)
}
