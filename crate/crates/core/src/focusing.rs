//! Dynamic receive focusing and per-scanline aperture extraction.
//!
//! Delays are expressed in samples relative to the on-axis element. An echo
//! from depth `z` on scanline `l` reaches element `i` after the on-axis
//! element by `tau = fs (sqrt(z^2 + x^2) - z) / c`, so the focused sample is
//! read at `n + tau` of the raw trace.

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rfdata::{CubeKind, ProbeConfig, RfCube};

/// Fractional-delay interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    #[default]
    Linear,
    Nearest,
}

impl std::str::FromStr for Interp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Interp::Linear),
            "nearest" => Ok(Interp::Nearest),
            other => Err(Error::invalid(format!("unknown interpolation `{other}`"))),
        }
    }
}

/// Receive delays in samples, `[L x N x E]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTable {
    pub tau: Array3<f32>,
    pub probe: ProbeConfig,
}

/// Extra receive delay in samples for depth row `n` and lateral offset `x`.
#[inline]
pub fn extra_delay(probe: &ProbeConfig, n: usize, x: f64) -> f64 {
    let z = probe.depth(n);
    probe.sampling_freq * ((z * z + x * x).sqrt() - z) / probe.sound_speed
}

pub fn compute_delays(probe: &ProbeConfig) -> Result<DelayTable> {
    probe.validate()?;
    let (l, n, e) = (probe.num_scanlines, probe.depth_samples(), probe.num_elements);
    let tau = Array3::from_shape_fn((l, n, e), |(l, n, e)| {
        extra_delay(probe, n, probe.element_x(e) - probe.scanline_x(l)) as f32
    });
    Ok(DelayTable { tau, probe: *probe })
}

/// Reads `trace` at fractional position `pos`; positions outside the trace
/// read as zero.
#[inline]
fn sample_at(trace: &[f64], pos: f64, interp: Interp) -> f64 {
    let len = trace.len();
    match interp {
        Interp::Nearest => {
            let k = pos.round();
            if k < 0.0 || k >= len as f64 {
                0.0
            } else {
                trace[k as usize]
            }
        }
        Interp::Linear => {
            let k = pos.floor();
            if k < -1.0 || k >= len as f64 {
                return 0.0;
            }
            let f = pos - k;
            let k = k as i64;
            let at = |i: i64| if i >= 0 && (i as usize) < len { trace[i as usize] } else { 0.0 };
            if f == 0.0 {
                at(k)
            } else {
                at(k) * (1.0 - f) + at(k + 1) * f
            }
        }
    }
}

fn check_raw(raw: &RfCube) -> Result<()> {
    if raw.kind != CubeKind::Raw {
        return Err(Error::invalid(format!("expected a raw cube, got {:?}", raw.kind)));
    }
    Ok(())
}

/// Produces the delayed cube `y[l, n, i] = x[l, n + tau[l, n, i], i]`.
pub fn apply_delays(raw: &RfCube, table: &DelayTable, interp: Interp) -> Result<RfCube> {
    check_raw(raw)?;
    if raw.data.dim() != table.tau.dim() {
        return Err(Error::dims(format!(
            "raw cube is {:?}, delay table is {:?}",
            raw.data.dim(),
            table.tau.dim()
        )));
    }
    let (lines, depth, elems) = raw.data.dim();
    let planes = par::map_range(lines, |l| {
        let mut out = vec![0.0f32; depth * elems];
        let mut trace = vec![0.0f64; depth];
        for e in 0..elems {
            for (n, t) in trace.iter_mut().enumerate() {
                *t = raw.data[[l, n, e]] as f64;
            }
            for n in 0..depth {
                let pos = n as f64 + table.tau[[l, n, e]] as f64;
                out[n * elems + e] = sample_at(&trace, pos, interp) as f32;
            }
        }
        out
    });
    let mut data = Array3::<f32>::zeros((lines, depth, elems));
    for (l, p) in planes.into_iter().enumerate() {
        data.index_axis_mut(Axis(0), l)
            .iter_mut()
            .zip(p)
            .for_each(|(d, s)| *d = s);
    }
    RfCube::new(CubeKind::Delayed, raw.probe, data)
}

/// How the aperture window behaves where it would leave the element row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMode {
    /// Keep the window centred on the scanline; elements outside the row
    /// contribute zeros.
    #[default]
    ZeroPad,
    /// Slide the window back inside the row (no zeros, asymmetric aperture).
    Shift,
}

impl std::str::FromStr for EdgeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" | "zero_pad" => Ok(EdgeMode::ZeroPad),
            "shift" => Ok(EdgeMode::Shift),
            other => Err(Error::invalid(format!("unknown edge mode `{other}`"))),
        }
    }
}

/// Per-scanline receive window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApertureSpec {
    /// First element of each window; negative or past `E - C` near the row
    /// ends in zero-pad mode.
    pub starts: Vec<i64>,
    pub aperture_size: usize,
    pub num_elements: usize,
}

impl ApertureSpec {
    /// Windows of `probe.num_rx` elements centred on each scanline.
    pub fn centered(probe: &ProbeConfig, edge: EdgeMode) -> Result<Self> {
        probe.validate()?;
        let c = probe.num_rx;
        let e = probe.num_elements;
        let starts = (0..probe.num_scanlines)
            .map(|l| {
                let s = (probe.scanline_center_element(l) - (c as f64 - 1.0) / 2.0).round() as i64;
                match edge {
                    EdgeMode::ZeroPad => s,
                    EdgeMode::Shift => s.clamp(0, (e - c) as i64),
                }
            })
            .collect();
        Ok(Self {
            starts,
            aperture_size: c,
            num_elements: e,
        })
    }

    /// Element offsets `d_l`, clamped into `[0, E - C]`.
    pub fn offsets(&self) -> Vec<usize> {
        let max = (self.num_elements - self.aperture_size) as i64;
        self.starts.iter().map(|&s| s.clamp(0, max) as usize).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.aperture_size == 0 || self.aperture_size > self.num_elements {
            return Err(Error::invalid("aperture size must lie in 1..=num_elements"));
        }
        let c = self.aperture_size as i64;
        let e = self.num_elements as i64;
        if let Some(s) = self.starts.iter().find(|&&s| s <= -c || s >= e) {
            return Err(Error::invalid(format!("aperture start {s} leaves no element in the row")));
        }
        Ok(())
    }
}

/// `Z[l, n, i] = Y[l, n, start_l + i]`, zero where the index leaves the row.
pub fn extract_aperture(delayed: &RfCube, spec: &ApertureSpec) -> Result<RfCube> {
    if delayed.kind != CubeKind::Delayed {
        return Err(Error::invalid(format!("expected a delayed cube, got {:?}", delayed.kind)));
    }
    spec.validate()?;
    let (lines, depth, elems) = delayed.data.dim();
    if elems != spec.num_elements || spec.starts.len() != lines {
        return Err(Error::dims("aperture spec does not match the cube"));
    }
    if spec.aperture_size != delayed.probe.num_rx {
        return Err(Error::dims("aperture size differs from probe.num_rx"));
    }
    let c = spec.aperture_size;
    let data = Array3::from_shape_fn((lines, depth, c), |(l, n, i)| {
        let e = spec.starts[l] + i as i64;
        if e >= 0 && (e as usize) < elems {
            delayed.data[[l, n, e as usize]]
        } else {
            0.0
        }
    });
    RfCube::new(CubeKind::Aperture, delayed.probe, data)
}

/// Delays and windows in one pass, touching only the aperture elements.
/// Equal to `extract_aperture(apply_delays(raw, compute_delays(probe)))`.
pub fn focus(raw: &RfCube, spec: &ApertureSpec, interp: Interp) -> Result<RfCube> {
    check_raw(raw)?;
    spec.validate()?;
    let probe = raw.probe;
    let (lines, depth, elems) = raw.data.dim();
    if elems != spec.num_elements || spec.starts.len() != lines || spec.aperture_size != probe.num_rx
    {
        return Err(Error::dims("aperture spec does not match the cube"));
    }
    let c = spec.aperture_size;
    let planes = par::map_range(lines, |l| {
        let mut out = vec![0.0f32; depth * c];
        let mut trace = vec![0.0f64; depth];
        let xl = probe.scanline_x(l);
        for i in 0..c {
            let e = spec.starts[l] + i as i64;
            if e < 0 || e as usize >= elems {
                continue;
            }
            let e = e as usize;
            for (n, t) in trace.iter_mut().enumerate() {
                *t = raw.data[[l, n, e]] as f64;
            }
            let x = probe.element_x(e) - xl;
            for n in 0..depth {
                // Same f32 rounding as the stored delay table.
                let tau = extra_delay(&probe, n, x) as f32 as f64;
                out[n * c + i] = sample_at(&trace, n as f64 + tau, interp) as f32;
            }
        }
        out
    });
    let mut data = Array3::<f32>::zeros((lines, depth, c));
    for (l, p) in planes.into_iter().enumerate() {
        data.index_axis_mut(Axis(0), l)
            .iter_mut()
            .zip(p)
            .for_each(|(d, s)| *d = s);
    }
    RfCube::new(CubeKind::Aperture, probe, data)
}
