//! Analytic-signal conversion of beamformed lines with an FIR Hilbert filter.

use ndarray::Array2;

use crate::beamform::BeamformedLines;
use crate::error::{Error, Result};
use crate::rfdata::IqImage;

pub const DEFAULT_HILBERT_LEN: usize = 63;

/// Odd-length antisymmetric FIR approximation of the Hilbert transform.
#[derive(Debug, Clone, PartialEq)]
pub struct HilbertKernel {
    pub taps: Vec<f64>,
}

impl Default for HilbertKernel {
    fn default() -> Self {
        hilbert_fir(DEFAULT_HILBERT_LEN).expect("default length is valid")
    }
}

/// Hamming-windowed ideal Hilbert response, `2 / (pi m)` at odd offsets `m`.
pub fn hilbert_fir(len: usize) -> Result<HilbertKernel> {
    if len % 2 == 0 || len < 7 {
        return Err(Error::invalid(format!("Hilbert length must be odd and >= 7, got {len}")));
    }
    let c = (len - 1) / 2;
    let taps = (0..len)
        .map(|k| {
            let m = k as i64 - c as i64;
            if m % 2 == 0 {
                return 0.0;
            }
            // Hamming window written in terms of |m| keeps the taps exactly
            // antisymmetric.
            let a = m.unsigned_abs() as f64;
            let w = 0.54 + 0.46 * (std::f64::consts::PI * a / c as f64).cos();
            m.signum() as f64 * w * 2.0 / (std::f64::consts::PI * a)
        })
        .collect();
    Ok(HilbertKernel { taps })
}

/// Centred convolution with zero padding, same length as `signal`:
/// `out[n] = sum_k taps[k] * signal[n - (k - c)]`, `c` the centre tap.
pub fn convolve_same(signal: &[f64], taps: &[f64]) -> Vec<f64> {
    let n = signal.len() as i64;
    let c = (taps.len() / 2) as i64;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (k, &h) in taps.iter().enumerate() {
                if h == 0.0 {
                    continue;
                }
                let j = i - (k as i64 - c);
                if j >= 0 && j < n {
                    acc += h * signal[j as usize];
                }
            }
            acc
        })
        .collect()
}

/// Applies `f` to every scanline of `u` (rows of the `[L x N]` matrix).
pub(crate) fn map_lines(u: &Array2<f64>, f: impl Fn(&[f64]) -> Vec<f64>) -> Array2<f64> {
    let (lines, depth) = u.dim();
    let mut out = Array2::zeros((lines, depth));
    let mut buf = vec![0.0; depth];
    for l in 0..lines {
        buf.iter_mut().zip(u.row(l)).for_each(|(b, v)| *b = *v);
        let r = f(&buf);
        out.row_mut(l).iter_mut().zip(r).for_each(|(o, v)| *o = v);
    }
    out
}

/// `I = u`, `Q = kappa * u` along depth.
pub fn to_analytic(u: &BeamformedLines, kernel: &HilbertKernel) -> Result<IqImage> {
    if u.u.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("beamformed lines contain non-finite values"));
    }
    let q = map_lines(&u.u, |line| convolve_same(line, &kernel.taps));
    IqImage::new(u.u.clone(), q)
}
