//! Image quality metrics: contrast (CR, CNR, GCNR) on dB B-mode images and
//! fidelity (PSNR, SSIM) on 8-bit display images.

use std::path::Path;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rfdata::{read_pgm, write_pgm, ProbeConfig};
use crate::sim::Disc;

/// Background and anechoic ROIs over the `(scanline, depth)` image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiPair {
    pub background: Array2<bool>,
    pub anechoic: Array2<bool>,
}

impl RoiPair {
    pub fn new(background: Array2<bool>, anechoic: Array2<bool>) -> Result<Self> {
        if background.dim() != anechoic.dim() {
            return Err(Error::dims("ROI masks differ in shape"));
        }
        if !background.iter().any(|&b| b) || !anechoic.iter().any(|&a| a) {
            return Err(Error::invalid("ROI is empty"));
        }
        if Zip::from(&background).and(&anechoic).fold(false, |acc, &b, &a| acc || (a && b)) {
            return Err(Error::invalid("background and anechoic ROIs overlap"));
        }
        Ok(Self { background, anechoic })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.background.dim()
    }

    /// ROIs for an anechoic disc: the inside shrunk to 80 % of the radius and
    /// a ring from 1.25 to 2 radii, on an image of `probe` scanlines by the
    /// depth rows `rows`.
    pub fn around_disc(probe: &ProbeConfig, rows: std::ops::Range<usize>, disc: &Disc) -> Result<Self> {
        let shape = (probe.num_scanlines, rows.len());
        let dist = |l: usize, r: usize| {
            let x = probe.scanline_x(l) - disc.cx;
            let z = probe.depth(rows.start + r) - disc.cz;
            x.hypot(z) / disc.radius
        };
        let anechoic = Array2::from_shape_fn(shape, |(l, r)| dist(l, r) <= 0.8);
        let background = Array2::from_shape_fn(shape, |(l, r)| {
            let d = dist(l, r);
            (1.25..=2.0).contains(&d)
        });
        Self::new(background, anechoic)
    }

    /// Labelled mask image: 0 outside, 1 background, 2 anechoic. Image rows
    /// are depth, columns scanlines, like the B-mode PGMs.
    pub fn to_labels(&self) -> Array2<u8> {
        let (l, n) = self.dim();
        Array2::from_shape_fn((n, l), |(r, c)| {
            if self.anechoic[[c, r]] {
                2
            } else if self.background[[c, r]] {
                1
            } else {
                0
            }
        })
    }

    pub fn from_labels(labels: &Array2<u8>) -> Result<Self> {
        let (n, l) = labels.dim();
        Self::new(
            Array2::from_shape_fn((l, n), |(c, r)| labels[[r, c]] == 1),
            Array2::from_shape_fn((l, n), |(c, r)| labels[[r, c]] == 2),
        )
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_pgm(&self.to_labels(), path)
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_labels(&read_pgm(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub gcnr_bins: usize,
    pub ssim_radius: usize,
    pub k1: f64,
    pub k2: f64,
    pub pixel_range: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            gcnr_bins: 256,
            ssim_radius: 50,
            k1: 0.01,
            k2: 0.03,
            pixel_range: 255.0,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gcnr_bins < 2 || self.ssim_radius < 1 || !(self.pixel_range > 0.0) {
            return Err(Error::invalid("metrics config needs bins >= 2, radius >= 1, range > 0"));
        }
        Ok(())
    }
}

fn check_roi(img: &Array2<f64>, roi: &RoiPair) -> Result<()> {
    if img.dim() != roi.dim() {
        return Err(Error::dims(format!(
            "image is {:?}, ROI is {:?}",
            img.dim(),
            roi.dim()
        )));
    }
    Ok(())
}

fn pick(img: &Array2<f64>, mask: &Array2<bool>) -> Vec<f64> {
    img.iter().zip(mask.iter()).filter(|(_, &m)| m).map(|(v, _)| *v).collect()
}

/// Mean and population variance.
fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// `|mu_B - mu_aS|` in the units of `img` (dB).
pub fn cr(img: &Array2<f64>, roi: &RoiPair) -> Result<f64> {
    check_roi(img, roi)?;
    let (mb, _) = moments(&pick(img, &roi.background));
    let (ma, _) = moments(&pick(img, &roi.anechoic));
    Ok((mb - ma).abs())
}

/// `|mu_B - mu_aS| / sqrt(var_B + var_aS)`; `+inf` when both variances vanish
/// but the means differ.
pub fn cnr(img: &Array2<f64>, roi: &RoiPair) -> Result<f64> {
    check_roi(img, roi)?;
    let (mb, vb) = moments(&pick(img, &roi.background));
    let (ma, va) = moments(&pick(img, &roi.anechoic));
    let d = (mb - ma).abs();
    let s = (vb + va).sqrt();
    if s == 0.0 {
        if d == 0.0 {
            return Err(Error::invalid("CNR undefined: both ROIs are constant and equal"));
        }
        return Ok(f64::INFINITY);
    }
    Ok(d / s)
}

/// Histogram of `v` over `[lo, hi]`, normalised to sum 1.
fn histogram(v: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let w = hi - lo;
    for &x in v {
        let b = if w > 0.0 {
            (((x - lo) / w) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize
        } else {
            0
        };
        h[b] += 1.0;
    }
    let n = v.len() as f64;
    h.iter_mut().for_each(|c| *c /= n);
    h
}

/// One minus the overlap of the two ROI intensity histograms, bins spanning
/// the union of both ranges.
pub fn gcnr(img: &Array2<f64>, roi: &RoiPair, cfg: &MetricsConfig) -> Result<f64> {
    cfg.validate()?;
    check_roi(img, roi)?;
    Ok(gcnr_samples(&pick(img, &roi.background), &pick(img, &roi.anechoic), cfg.gcnr_bins))
}

/// GCNR of two raw sample sets.
pub fn gcnr_samples(b: &[f64], a: &[f64], bins: usize) -> f64 {
    let lo = b.iter().chain(a).cloned().fold(f64::INFINITY, f64::min);
    let hi = b.iter().chain(a).cloned().fold(f64::NEG_INFINITY, f64::max);
    let hb = histogram(b, lo, hi, bins);
    let ha = histogram(a, lo, hi, bins);
    let overlap: f64 = hb.iter().zip(&ha).map(|(x, y)| x.min(*y)).sum();
    (1.0 - overlap).clamp(0.0, 1.0)
}

fn check_pair(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::dims(format!("images are {:?} and {:?}", a.dim(), b.dim())));
    }
    if a.is_empty() {
        return Err(Error::invalid("empty image"));
    }
    Ok(())
}

/// `10 log10(R^2 / MSE)`; identical images give `+inf`.
pub fn psnr(reference: &Array2<f64>, test: &Array2<f64>, cfg: &MetricsConfig) -> Result<f64> {
    check_pair(reference, test)?;
    let mse = Zip::from(reference)
        .and(test)
        .fold(0.0, |acc, a, b| acc + (a - b) * (a - b))
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (cfg.pixel_range * cfg.pixel_range / mse).log10())
}

/// Summed-area table with a zero first row and column.
fn integral(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let mut s = Array2::zeros((h + 1, w + 1));
    for r in 0..h {
        let mut row = 0.0;
        for c in 0..w {
            row += img[[r, c]];
            s[[r + 1, c + 1]] = s[[r, c + 1]] + row;
        }
    }
    s
}

fn box_sum(s: &Array2<f64>, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
    s[[r1, c1]] - s[[r0, c1]] - s[[r1, c0]] + s[[r0, c0]]
}

/// Mean SSIM over square uniform windows of `cfg.ssim_radius`, clipped at
/// the image borders, with population statistics.
pub fn ssim(reference: &Array2<f64>, test: &Array2<f64>, cfg: &MetricsConfig) -> Result<f64> {
    cfg.validate()?;
    check_pair(reference, test)?;
    let c1 = (cfg.k1 * cfg.pixel_range).powi(2);
    let c2 = (cfg.k2 * cfg.pixel_range).powi(2);
    let sx = integral(reference);
    let sy = integral(test);
    let sxx = integral(&(reference * reference));
    let syy = integral(&(test * test));
    let sxy = integral(&(reference * test));
    let (h, w) = reference.dim();
    let rad = cfg.ssim_radius;
    let mut total = 0.0;
    for r in 0..h {
        let (r0, r1) = (r.saturating_sub(rad), (r + rad + 1).min(h));
        for c in 0..w {
            let (q0, q1) = (c.saturating_sub(rad), (c + rad + 1).min(w));
            let n = ((r1 - r0) * (q1 - q0)) as f64;
            let mx = box_sum(&sx, r0, r1, q0, q1) / n;
            let my = box_sum(&sy, r0, r1, q0, q1) / n;
            let vx = (box_sum(&sxx, r0, r1, q0, q1) / n - mx * mx).max(0.0);
            let vy = (box_sum(&syy, r0, r1, q0, q1) / n - my * my).max(0.0);
            let cxy = box_sum(&sxy, r0, r1, q0, q1) / n - mx * my;
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (h * w) as f64)
}

/// All five metrics for one test image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cr: f64,
    pub cnr: f64,
    pub gcnr: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Scores `test_db` against `reference_db`. Contrast metrics use the dB
/// images, fidelity metrics their 8-bit display mapping.
pub fn evaluate(
    reference_db: &Array2<f64>,
    test_db: &Array2<f64>,
    roi: Option<&RoiPair>,
    dynamic_range_db: f64,
    cfg: &MetricsConfig,
) -> Result<MetricReport> {
    let to8 = |img: &Array2<f64>| crate::rfdata::to_gray8(img, dynamic_range_db).mapv(|v| v as f64);
    let (g_ref, g_test) = (to8(reference_db), to8(test_db));
    let (cr_v, cnr_v, gcnr_v) = match roi {
        Some(roi) => (cr(test_db, roi)?, cnr(test_db, roi)?, gcnr(test_db, roi, cfg)?),
        None => (f64::NAN, f64::NAN, f64::NAN),
    };
    Ok(MetricReport {
        cr: cr_v,
        cnr: cnr_v,
        gcnr: gcnr_v,
        psnr: psnr(&g_ref, &g_test, cfg)?,
        ssim: ssim(&g_ref, &g_test, cfg)?,
    })
}

/// Width of the contiguous region around the peak of `profile` that stays
/// within `drop_db` of the peak, with linear interpolation of the two
/// crossings. `profile` is in dB; `spacing` is the sample pitch.
pub fn lobe_width(profile: &[f64], spacing: f64, drop_db: f64) -> Option<f64> {
    let (peak_i, &peak) = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    let level = peak - drop_db;
    let cross = |inside: usize, outside: usize| -> Option<f64> {
        let (a, b) = (profile[inside], profile[outside]);
        let t = (a - level) / (a - b);
        Some(inside as f64 + t * (outside as f64 - inside as f64))
    };
    let mut left = peak_i;
    while left > 0 && profile[left - 1] >= level {
        left -= 1;
    }
    let mut right = peak_i;
    while right + 1 < profile.len() && profile[right + 1] >= level {
        right += 1;
    }
    if left == 0 || right + 1 == profile.len() {
        return None;
    }
    let l = cross(left, left - 1)?;
    let r = cross(right, right + 1)?;
    Some((r - l) * spacing)
}
