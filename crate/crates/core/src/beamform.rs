//! Reference beamformers: delay-and-sum, minimum variance with subaperture
//! averaging, and FIR deconvolution along depth.

use ndarray::Array2;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iq::{convolve_same, map_lines};
use crate::linalg::{cholesky_in_place, cholesky_solve};
use crate::par;
use crate::rfdata::{ChannelMask, CubeKind, RfCube};
use crate::sim::PulseModel;

/// Beamformer output before the Hilbert stage, `[L x N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformedLines {
    pub u: Array2<f64>,
}

impl BeamformedLines {
    pub fn dim(&self) -> (usize, usize) {
        self.u.dim()
    }
}

/// The mask to use for `z`: the explicit one, else the attached one, else
/// every channel.
fn resolve_mask<'a>(z: &'a RfCube, mask: Option<&'a ChannelMask>) -> Result<std::borrow::Cow<'a, ChannelMask>> {
    if z.kind != CubeKind::Aperture {
        return Err(Error::invalid(format!("expected an aperture cube, got {:?}", z.kind)));
    }
    let m = match mask.or(z.mask.as_ref()) {
        Some(m) => std::borrow::Cow::Borrowed(m),
        None => std::borrow::Cow::Owned(ChannelMask::full(z.channels())),
    };
    m.check_compatible(z.depth(), z.channels())?;
    Ok(m)
}

/// Mean over the active channels at each `(l, n)`.
pub fn das(z: &RfCube, mask: Option<&ChannelMask>) -> Result<BeamformedLines> {
    let mask = resolve_mask(z, mask)?;
    let (lines, depth, channels) = z.data.dim();
    let mut u = Array2::zeros((lines, depth));
    for n in 0..depth {
        let row = mask.row(n);
        let j = row.iter().filter(|&&a| a).count();
        if j == 0 {
            return Err(Error::invalid(format!("no active channel at depth row {n}")));
        }
        for l in 0..lines {
            let mut acc = 0.0;
            for c in 0..channels {
                if row[c] {
                    acc += z.data[[l, n, c]] as f64;
                }
            }
            u[[l, n]] = acc / j as f64;
        }
    }
    Ok(BeamformedLines { u })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MvConfig {
    /// Subaperture length `K`.
    pub subaperture: usize,
    /// Diagonal loading relative to the mean eigenvalue.
    pub diag_loading: f64,
}

impl Default for MvConfig {
    fn default() -> Self {
        Self {
            subaperture: 16,
            diag_loading: 1e-2,
        }
    }
}

impl MvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subaperture == 0 {
            return Err(Error::invalid("subaperture length must be at least 1"));
        }
        if !(self.diag_loading >= 0.0 && self.diag_loading.is_finite()) {
            return Err(Error::invalid("diagonal loading must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Capon weights `w = R~^-1 1 / (1' R~^-1 1)` with
/// `R~ = R + loading * trace(R) / K * I`; `r` is row-major `K x K`.
pub fn mv_weights(r: &[f64], k: usize, loading: f64) -> Result<Vec<f64>> {
    if r.len() != k * k || k == 0 {
        return Err(Error::dims(format!("covariance has {} entries, expected {k}x{k}", r.len())));
    }
    let mut a = r.to_vec();
    let trace: f64 = (0..k).map(|i| r[i * k + i]).sum();
    let load = loading * trace / k as f64;
    for i in 0..k {
        a[i * k + i] += load;
    }
    cholesky_in_place(&mut a, k)?;
    let mut w = vec![1.0; k];
    cholesky_solve(&a, k, &mut w);
    let s: f64 = w.iter().sum();
    if !(s.is_finite() && s != 0.0) {
        return Err(Error::numerical("degenerate Capon normalisation"));
    }
    w.iter_mut().for_each(|v| *v /= s);
    Ok(w)
}

/// Subaperture-averaged Capon output for one compacted channel vector.
fn mv_sample(x: &[f64], cfg: &MvConfig, r: &mut [f64]) -> Result<f64> {
    let k = cfg.subaperture;
    let j = x.len();
    let windows = j - k + 1;
    r.iter_mut().for_each(|v| *v = 0.0);
    for p in 0..windows {
        let zp = &x[p..p + k];
        for a in 0..k {
            let za = zp[a];
            for b in 0..=a {
                r[a * k + b] += za * zp[b];
            }
        }
    }
    let scale = 1.0 / windows as f64;
    for a in 0..k {
        for b in 0..=a {
            let v = r[a * k + b] * scale;
            r[a * k + b] = v;
            r[b * k + a] = v;
        }
    }
    let trace: f64 = (0..k).map(|i| r[i * k + i]).sum();
    if trace == 0.0 {
        return Ok(0.0);
    }
    let w = mv_weights(r, k, cfg.diag_loading)?;
    let mut out = 0.0;
    for p in 0..windows {
        out += w.iter().zip(&x[p..p + k]).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(out * scale)
}

/// Minimum-variance beamformer with subaperture averaging over the active
/// channels, compacted to a contiguous vector before windowing.
pub fn mvbf(z: &RfCube, cfg: &MvConfig, mask: Option<&ChannelMask>) -> Result<BeamformedLines> {
    cfg.validate()?;
    let mask = resolve_mask(z, mask)?;
    let (lines, depth, channels) = z.data.dim();
    let k = cfg.subaperture;
    for n in 0..depth {
        let j = mask.keep_count(n);
        if j < k {
            return Err(Error::invalid(format!(
                "only {j} active channels at depth row {n}; lower the subaperture length below {k}"
            )));
        }
    }
    let rows = par::map_range(lines, |l| -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(channels);
        let mut r = vec![0.0; k * k];
        (0..depth)
            .map(|n| {
                x.clear();
                let row = mask.row(n);
                for c in 0..channels {
                    if row[c] {
                        x.push(z.data[[l, n, c]] as f64);
                    }
                }
                mv_sample(&x, cfg, &mut r)
            })
            .collect()
    });
    let mut u = Array2::zeros((lines, depth));
    for (l, row) in rows.into_iter().enumerate() {
        u.row_mut(l).iter_mut().zip(row?).for_each(|(d, s)| *d = s);
    }
    Ok(BeamformedLines { u })
}

/// Shift-invariant depth-axis FIR kernel, odd length.
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvKernel {
    pub taps: Vec<f64>,
}

impl DeconvKernel {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.len() % 2 == 0 {
            return Err(Error::invalid("deconvolution kernel must have odd length"));
        }
        if taps.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("deconvolution kernel has non-finite taps"));
        }
        Ok(Self { taps })
    }

    pub fn identity() -> Self {
        Self { taps: vec![1.0] }
    }

    /// Regularised inverse of the sampled transmit pulse,
    /// `conj(P) / (|P|^2 + reg * max |P|^2)`, truncated to `len` taps.
    pub fn wiener(pulse: &PulseModel, fs: f64, len: usize, reg: f64) -> Result<Self> {
        if len % 2 == 0 {
            return Err(Error::invalid("deconvolution kernel must have odd length"));
        }
        pulse.validate()?;
        let p = pulse.sampled(fs);
        let nfft = (4 * (p.len() + len)).next_power_of_two();
        let half = (p.len() / 2) as i64;
        let mut spec = vec![Complex64::new(0.0, 0.0); nfft];
        for (k, v) in p.iter().enumerate() {
            let idx = (k as i64 - half).rem_euclid(nfft as i64) as usize;
            spec[idx] = Complex64::new(*v, 0.0);
        }
        let mut planner = FftPlanner::new();
        planner.plan_fft_forward(nfft).process(&mut spec);
        let peak = spec.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
        for c in spec.iter_mut() {
            *c = c.conj() / (c.norm_sqr() + reg * peak);
        }
        planner.plan_fft_inverse(nfft).process(&mut spec);
        let c = (len / 2) as i64;
        let taps = (0..len as i64)
            .map(|k| spec[(k - c).rem_euclid(nfft as i64) as usize].re / nfft as f64)
            .collect();
        Self::new(taps)
    }
}

/// Per-scanline depth convolution `h * u`, zero-padded, same length.
pub fn deconvolve(u: &BeamformedLines, kernel: &DeconvKernel) -> BeamformedLines {
    BeamformedLines {
        u: map_lines(&u.u, |line| convolve_same(line, &kernel.taps)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rfdata::ProbeConfig;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probe(rx: usize, lines: usize) -> ProbeConfig {
        ProbeConfig {
            num_elements: rx.max(4),
            num_tx: rx.max(4),
            num_scanlines: lines,
            num_rx: rx,
            ..ProbeConfig::default()
        }
    }

    fn cube(data: Array3<f32>) -> RfCube {
        let (l, _, c) = data.dim();
        RfCube::new(CubeKind::Aperture, probe(c, l), data).unwrap()
    }

    #[test]
    fn das_is_a_mean_of_active_channels() {
        let z = cube(Array3::from_shape_vec((1, 1, 4), vec![1.0, 2.0, 3.0, 6.0]).unwrap());
        assert_eq!(das(&z, None).unwrap().u[[0, 0]], 3.0);
        let ones = cube(Array3::from_elem((2, 3, 4), 1.0));
        let mut m = Array2::from_elem((3, 4), false);
        m[[0, 1]] = true;
        m[[1, 0]] = true;
        m[[1, 3]] = true;
        m[[2, 2]] = true;
        let m = ChannelMask::new(m).unwrap();
        assert!(das(&ones, Some(&m)).unwrap().u.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn das_matches_masked_mean_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = cube(Array3::from_shape_fn((1, 1, 64), |_| rng.random_range(-1.0..1.0)));
        let mut active = vec![false; 64];
        let mut picked = 0;
        while picked < 16 {
            let i = rng.random_range(0..64);
            if !active[i] {
                active[i] = true;
                picked += 1;
            }
        }
        let m = ChannelMask::new(Array2::from_shape_vec((1, 64), active.clone()).unwrap()).unwrap();
        let mut s = 0.0;
        for i in 0..64 {
            if active[i] {
                s += z.data[[0, 0, i]] as f64;
            }
        }
        assert!((das(&z, Some(&m)).unwrap().u[[0, 0]] - s / 16.0).abs() < 1e-12);
    }

    #[test]
    fn das_rejects_empty_row() {
        let z = cube(Array3::from_elem((1, 2, 4), 1.0));
        let m = ChannelMask::new(Array2::from_elem((1, 4), false)).unwrap();
        assert!(das(&z, Some(&m)).is_err());
    }

    #[test]
    fn capon_closed_forms() {
        let w = mv_weights(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 3, 0.0).unwrap();
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let w = mv_weights(&[1.0, 0.0, 0.0, 4.0], 2, 0.0).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-15 && (w[1] - 0.2).abs() < 1e-15);
        let w = mv_weights(&[2.0, 1.0, 1.0, 2.0], 2, 0.0).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        assert!(matches!(
            mv_weights(&[1.0, 1.0, 1.0, 1.0], 2, 0.0),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn mvbf_is_distortionless_on_constant_data() {
        let z = cube(Array3::from_elem((2, 3, 16), 2.5));
        for k in [1, 4, 8, 16] {
            let cfg = MvConfig { subaperture: k, diag_loading: 1e-2 };
            for v in mvbf(&z, &cfg, None).unwrap().u.iter() {
                assert!((v - 2.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_window_capon_is_finite_and_too_few_channels_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = cube(Array3::from_shape_fn((1, 4, 8), |_| rng.random_range(-1.0..1.0)));
        let cfg = MvConfig { subaperture: 8, diag_loading: 1e-2 };
        assert!(mvbf(&z, &cfg, None).unwrap().u.iter().all(|v| v.is_finite()));
        let cfg = MvConfig { subaperture: 9, diag_loading: 1e-2 };
        assert!(matches!(mvbf(&z, &cfg, None), Err(Error::Invalid(_))));
    }

    #[test]
    fn mvbf_is_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = Array3::from_shape_fn((2, 5, 16), |_| rng.random_range(-1.0f32..1.0));
        let a = mvbf(&cube(data.clone()), &MvConfig { subaperture: 6, ..MvConfig::default() }, None).unwrap();
        let b = mvbf(&cube(data.mapv(|v| v * 4.0)), &MvConfig { subaperture: 6, ..MvConfig::default() }, None)
            .unwrap();
        for (x, y) in a.u.iter().zip(b.u.iter()) {
            assert!((4.0 * x - y).abs() < 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn deconvolution_identity_and_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = BeamformedLines {
            u: Array2::from_shape_fn((3, 40), |_| rng.random_range(-1.0..1.0)),
        };
        assert_eq!(deconvolve(&u, &DeconvKernel::identity()), u);
        let taps: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = deconvolve(&u, &DeconvKernel::new(taps.clone()).unwrap());
        for l in 0..3 {
            for n in 0..40i64 {
                let mut s = 0.0;
                for j in 0..40i64 {
                    let k = n - j + 3;
                    if (0..7).contains(&k) {
                        s += taps[k as usize] * u.u[[l, j as usize]];
                    }
                }
                assert!((v.u[[l, n as usize]] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wiener_kernel_sharpens_the_pulse() {
        let pulse = PulseModel::default();
        let fs = 4.0e7;
        let k = DeconvKernel::wiener(&pulse, fs, 41, 1e-2).unwrap();
        assert_eq!(k.taps.len(), 41);
        let p = pulse.sampled(fs);
        let restored = convolve_same(&p, &k.taps);
        let c = p.len() / 2;
        let energy: f64 = restored.iter().map(|v| v * v).sum();
        // Most of the restored energy concentrates at the centre sample.
        assert!(restored[c] * restored[c] / energy > 0.5);
        assert!(DeconvKernel::new(vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn mvbf_variance_below_das_on_white_noise_with_half_aperture_windows() {
        use rand_distr::StandardNormal;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let z = cube(Array3::from_shape_fn((1, 2000, 32), |_| rng.sample::<f64, _>(StandardNormal) as f32));
        let a = das(&z, None).unwrap();
        let b = mvbf(&z, &MvConfig { subaperture: 16, diag_loading: 1e-2 }, None).unwrap();
        let va = a.u.iter().map(|v| v * v).sum::<f64>() / 2000.0;
        let vb = b.u.iter().map(|v| v * v).sum::<f64>() / 2000.0;
        assert!(vb < va, "mv {vb} das {va}");
    }
}
