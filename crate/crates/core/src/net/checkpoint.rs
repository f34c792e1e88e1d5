//! `UBFW` weight files.
//!
//! Layout (little endian): magic `UBFW`, `u32` version, ten `u32`
//! architecture fields (in, out, stages, convs per stage, channels, norm,
//! bias, te, rx, input skip), `u64` value count, then every value as `f32`: per
//! convolution its weight, bias, gamma, beta, running mean and running
//! variance, skipping the parts the architecture does not have.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{ArchSpec, NetworkParams, Norm};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"UBFW";
const WEIGHTS_VERSION: u32 = 1;

fn tensors(p: &NetworkParams) -> Vec<&[f64]> {
    let mut v: Vec<&[f64]> = Vec::new();
    for (c, n) in p.convs.iter().zip(&p.norms) {
        v.push(&c.weight);
        if let Some(b) = &c.bias {
            v.push(b);
        }
        if let Some(n) = n {
            v.extend([&n.gamma[..], &n.beta, &n.running_mean, &n.running_var]);
        }
    }
    v
}

fn tensors_mut(p: &mut NetworkParams) -> Vec<&mut Vec<f64>> {
    let mut v: Vec<&mut Vec<f64>> = Vec::new();
    for (c, n) in p.convs.iter_mut().zip(p.norms.iter_mut()) {
        v.push(&mut c.weight);
        if let Some(b) = c.bias.as_mut() {
            v.push(b);
        }
        if let Some(n) = n.as_mut() {
            v.push(&mut n.gamma);
            v.push(&mut n.beta);
            v.push(&mut n.running_mean);
            v.push(&mut n.running_var);
        }
    }
    v
}

pub fn write_weights(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    let a = &params.arch;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    let fields = [
        a.in_channels,
        a.out_channels,
        a.stages,
        a.convs_per_stage,
        a.channels,
        (a.norm == Norm::Batch) as usize,
        a.bias as usize,
        a.te,
        a.rx,
        a.input_skip as usize,
    ];
    for f in fields {
        let f = u32::try_from(f).map_err(|_| Error::Size(format!("architecture field {f} too large")))?;
        w.write_all(&f.to_le_bytes())?;
    }
    let ts = tensors(params);
    let count: usize = ts.iter().map(|t| t.len()).sum();
    w.write_all(&(count as u64).to_le_bytes())?;
    for t in ts {
        for v in t {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<NetworkParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 8 + 40 + 8 || &buf[..4] != WEIGHTS_MAGIC {
        return Err(Error::Format("not a UBFW weight file".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes([buf[o], buf[o + 1], buf[o + 2], buf[o + 3]]) as usize;
    if u32_at(4) != WEIGHTS_VERSION as usize {
        return Err(Error::Format(format!("unsupported weight file version {}", u32_at(4))));
    }
    let f: Vec<usize> = (0..10).map(|k| u32_at(8 + 4 * k)).collect();
    if f[5] > 1 || f[6] > 1 || f[9] > 1 {
        return Err(Error::Format("corrupt architecture flags".into()));
    }
    let arch = ArchSpec {
        in_channels: f[0],
        out_channels: f[1],
        stages: f[2],
        convs_per_stage: f[3],
        channels: f[4],
        norm: if f[5] == 1 { Norm::Batch } else { Norm::None },
        bias: f[6] == 1,
        te: f[7],
        rx: f[8],
        input_skip: f[9] == 1,
    };
    let mut params = NetworkParams::zeros(arch).map_err(|e| Error::Format(format!("bad architecture: {e}")))?;
    let count = u64::from_le_bytes(buf[48..56].try_into().unwrap()) as usize;
    let want: usize = tensors(&params).iter().map(|t| t.len()).sum();
    if count != want {
        return Err(Error::Size(format!("weight file holds {count} values, architecture needs {want}")));
    }
    let body = &buf[56..];
    if body.len() != 4 * count {
        return Err(Error::Size(format!("weight payload is {} bytes, expected {}", body.len(), 4 * count)));
    }
    let mut vals = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    for t in tensors_mut(&mut params) {
        t.iter_mut().for_each(|v| *v = vals.next().unwrap());
    }
    Ok(params)
}

/// Rounds every stored value to `f32`, so the result equals what a
/// write/read round trip returns.
pub fn round_to_f32(params: &mut NetworkParams) {
    for t in tensors_mut(params) {
        t.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_after_f32_rounding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ubfw");
        for arch in [ArchSpec::desk(8, 6), ArchSpec { bias: true, norm: Norm::None, ..ArchSpec::desk(4, 4) }] {
            let mut p = NetworkParams::xavier(arch, 3).unwrap();
            if let Some(bn) = p.norms[0].as_mut() {
                bn.running_mean[0] = 0.25;
                bn.running_var[1] = 3.5;
            }
            round_to_f32(&mut p);
            write_weights(&p, &path).unwrap();
            assert_eq!(read_weights(&path).unwrap(), p);
        }
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ubfw");
        let p = NetworkParams::xavier(ArchSpec::desk(4, 4), 0).unwrap();
        write_weights(&p, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_weights(&path), Err(Error::Size(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_weights(&path), Err(Error::Format(_))));
    }
}
