//! Synthetic focused B-mode acquisition from point-scatterer phantoms.
//!
//! Single-scattering ray model: every scatterer reflects the transmit pulse
//! once, the transmit delay follows a virtual source at the focal point of the
//! scanline, the receive delay is the straight path to each element, and the
//! echo amplitude falls off as `1/r` along the receive path. No attenuation,
//! no elevation, constant sound speed.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rfdata::{CubeKind, ProbeConfig, RfCube};

/// Reference distance for the spreading loss; an echo received over 10 mm
/// keeps its scatterer amplitude.
const SPREADING_REF: f64 = 0.01;
/// Pulse table oversampling relative to the RF sampling rate.
const PULSE_OVERSAMPLE: usize = 32;
/// Minimum number of scatterers per resolution cell for developed speckle.
pub const SCATTERERS_PER_CELL: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    /// Lateral position in meters.
    pub x: f64,
    /// Depth in meters.
    pub z: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub cx: f64,
    pub cz: f64,
    pub radius: f64,
}

impl Disc {
    pub fn contains(&self, x: f64, z: f64) -> bool {
        (x - self.cx).powi(2) + (z - self.cz).powi(2) <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Rect {
        x_min: f64,
        x_max: f64,
        z_min: f64,
        z_max: f64,
    },
    Disc(Disc),
}

impl Shape {
    pub fn contains(&self, x: f64, z: f64) -> bool {
        match *self {
            Shape::Rect {
                x_min,
                x_max,
                z_min,
                z_max,
            } => x >= x_min && x <= x_max && z >= z_min && z <= z_max,
            Shape::Disc(d) => d.contains(x, z),
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Rect {
                x_min,
                x_max,
                z_min,
                z_max,
            } => (x_min, x_max, z_min, z_max),
            Shape::Disc(d) => (d.cx - d.radius, d.cx + d.radius, d.cz - d.radius, d.cz + d.radius),
        }
    }
}

/// Labelled region filled with randomly placed scatterers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub label: String,
    pub shape: Shape,
    /// Scatterers per square millimeter.
    pub density_per_mm2: f64,
    /// Standard deviation of the Gaussian scatterer amplitudes.
    pub amplitude: f64,
}

/// A realised phantom. `regions` and `anechoic` are kept for ROI construction;
/// only `scatterers` drive the simulation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Phantom {
    pub scatterers: Vec<Scatterer>,
    pub regions: Vec<Region>,
    pub anechoic: Vec<Disc>,
}

impl Phantom {
    pub fn validate(&self, probe: &ProbeConfig) -> Result<()> {
        let hw = probe.half_width();
        for (k, s) in self.scatterers.iter().enumerate() {
            if !(s.x.is_finite() && s.z.is_finite() && s.amplitude.is_finite()) {
                return Err(Error::invalid(format!("scatterer {k} is not finite")));
            }
            if s.x.abs() > hw + 1e-12 || s.z < probe.axial_min - 1e-12 || s.z > probe.axial_max + 1e-12
            {
                return Err(Error::invalid(format!(
                    "scatterer {k} at ({:.4e}, {:.4e}) m lies outside the field of view",
                    s.x, s.z
                )));
            }
            if s.amplitude != 0.0 && self.anechoic.iter().any(|d| d.contains(s.x, s.z)) {
                return Err(Error::invalid(format!("scatterer {k} lies inside an anechoic disc")));
            }
        }
        Ok(())
    }

    /// Realises `region` with a seeded RNG, skipping positions outside the
    /// field of view or inside any anechoic disc.
    pub fn fill_region(&mut self, region: Region, probe: &ProbeConfig, rng: &mut impl Rng) {
        let hw = probe.half_width();
        let (x0, x1, z0, z1) = region.shape.bounds();
        let (x0, x1) = (x0.max(-hw), x1.min(hw));
        let (z0, z1) = (z0.max(probe.axial_min), z1.min(probe.axial_max));
        if x1 > x0 && z1 > z0 {
            let area_mm2 = (x1 - x0) * (z1 - z0) * 1e6;
            let count = (region.density_per_mm2 * area_mm2).ceil() as usize;
            for _ in 0..count {
                let x = rng.random_range(x0..=x1);
                let z = rng.random_range(z0..=z1);
                let a: f64 = rng.sample(StandardNormal);
                if region.shape.contains(x, z) && !self.anechoic.iter().any(|d| d.contains(x, z)) {
                    self.scatterers.push(Scatterer {
                        x,
                        z,
                        amplitude: a * region.amplitude,
                    });
                }
            }
        }
        self.regions.push(region);
    }
}

/// Gaussian-windowed sinusoid transmit pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseModel {
    pub center_freq: f64,
    /// -6 dB bandwidth over centre frequency.
    pub fractional_bandwidth: f64,
}

impl Default for PulseModel {
    fn default() -> Self {
        Self {
            center_freq: 8.5e6,
            fractional_bandwidth: 0.6,
        }
    }
}

impl PulseModel {
    pub fn for_probe(probe: &ProbeConfig) -> Self {
        Self {
            center_freq: probe.center_freq,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.center_freq > 0.0 && self.center_freq.is_finite()) {
            return Err(Error::invalid("pulse centre frequency must be positive"));
        }
        if !(self.fractional_bandwidth > 0.0 && self.fractional_bandwidth < 2.0) {
            return Err(Error::invalid("fractional bandwidth must lie in (0, 2)"));
        }
        Ok(())
    }

    /// Standard deviation of the Gaussian envelope in seconds.
    pub fn sigma(&self) -> f64 {
        let bw = self.fractional_bandwidth * self.center_freq;
        (2.0 * std::f64::consts::LN_2).sqrt() / (std::f64::consts::PI * bw)
    }

    /// Half-length of the truncated pulse.
    pub fn half_duration(&self) -> f64 {
        4.0 * self.sigma()
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t.abs() > self.half_duration() {
            return 0.0;
        }
        let s = self.sigma();
        (-t * t / (2.0 * s * s)).exp() * (2.0 * std::f64::consts::PI * self.center_freq * t).cos()
    }

    /// Pulse sampled at `fs` around `t = 0`, odd length.
    pub fn sampled(&self, fs: f64) -> Vec<f64> {
        let half = (self.half_duration() * fs).ceil() as i64;
        (-half..=half).map(|k| self.eval(k as f64 / fs)).collect()
    }

    /// Axial extent of a resolution cell (-6 dB pulse length, two-way).
    pub fn axial_resolution(&self, sound_speed: f64) -> f64 {
        sound_speed / (2.0 * self.fractional_bandwidth * self.center_freq)
    }
}

/// Oversampled pulse waveform read back with linear interpolation.
struct PulseTable {
    start: f64,
    inv_dt: f64,
    values: Vec<f64>,
}

impl PulseTable {
    fn new(pulse: &PulseModel, fs: f64) -> Self {
        let dt = 1.0 / (fs * PULSE_OVERSAMPLE as f64);
        let half = pulse.half_duration();
        let count = (2.0 * half / dt).ceil() as usize + 2;
        Self {
            start: -half,
            inv_dt: 1.0 / dt,
            values: (0..count).map(|k| pulse.eval(-half + k as f64 * dt)).collect(),
        }
    }

    #[inline]
    fn at(&self, t: f64) -> f64 {
        let pos = (t - self.start) * self.inv_dt;
        if pos < 0.0 {
            return 0.0;
        }
        let i = pos as usize;
        if i + 1 >= self.values.len() {
            return 0.0;
        }
        let f = pos - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }
}

/// Transmit arrival time at `(x, z)` for scanline `l`: virtual source at the
/// focal point on the scanline axis.
pub fn transmit_delay(probe: &ProbeConfig, l: usize, x: f64, z: f64) -> f64 {
    let zf = probe.focal_depth;
    let d = (x - probe.scanline_x(l)).hypot(z - zf);
    let path = if z >= zf { zf + d } else { zf - d };
    path / probe.sound_speed
}

/// Simulates the raw cube `X` (`L x N x E`) for a phantom.
///
/// White Gaussian noise of standard deviation `noise_std` is added from a
/// per-scanline ChaCha stream keyed by `(seed, l)`, so output does not depend
/// on how scanlines are scheduled.
pub fn simulate_rf(
    phantom: &Phantom,
    probe: &ProbeConfig,
    pulse: &PulseModel,
    noise_std: f64,
    seed: u64,
) -> Result<RfCube> {
    probe.validate()?;
    pulse.validate()?;
    phantom.validate(probe)?;
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::invalid("noise_std must be a finite non-negative number"));
    }
    let depth = probe.depth_samples();
    let elements = probe.num_elements;
    let fs = probe.sampling_freq;
    let c = probe.sound_speed;
    let table = PulseTable::new(pulse, fs);
    let half = pulse.half_duration();
    let element_x: Vec<f64> = (0..elements).map(|e| probe.element_x(e)).collect();

    let lines = par::map_range(probe.num_scanlines, |l| {
        let mut buf = vec![0.0f64; depth * elements];
        for s in &phantom.scatterers {
            if s.amplitude == 0.0 {
                continue;
            }
            let tx = transmit_delay(probe, l, s.x, s.z);
            for (e, &xe) in element_x.iter().enumerate() {
                let r = (s.x - xe).hypot(s.z);
                let t0 = tx + r / c;
                let a = s.amplitude * SPREADING_REF / r;
                let n0 = ((t0 - half) * fs).ceil().max(0.0) as usize;
                let n1 = (((t0 + half) * fs).floor() as i64).min(depth as i64 - 1);
                if n1 < n0 as i64 {
                    continue;
                }
                for n in n0..=n1 as usize {
                    buf[n * elements + e] += a * table.at(n as f64 / fs - t0);
                }
            }
        }
        if noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(l as u64);
            for v in buf.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *v += noise_std * g;
            }
        }
        buf
    });

    let mut data = Array3::<f32>::zeros((probe.num_scanlines, depth, elements));
    for (l, buf) in lines.into_iter().enumerate() {
        let mut plane = data.index_axis_mut(ndarray::Axis(0), l);
        for (dst, src) in plane.iter_mut().zip(buf) {
            *dst = src as f32;
        }
    }
    RfCube::new(CubeKind::Raw, *probe, data)
}

/// Named phantom scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    /// Speckle background with a 15 mm anechoic cyst at 40 mm and smaller
    /// cysts deeper down.
    CystGrid,
    /// Isolated point scatterers at 20, 30, 40, 50, 60 mm on the centre
    /// scanline.
    PointTargets,
    /// Fully developed speckle with a 6 mm anechoic disc at 48 mm.
    SpeckleWithAnechoic,
    /// Two point scatterers 1 mm apart laterally at 30 mm depth.
    TwoPoint,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyst_grid" => Ok(Self::CystGrid),
            "point_targets" => Ok(Self::PointTargets),
            "speckle_with_anechoic" => Ok(Self::SpeckleWithAnechoic),
            "two_point" => Ok(Self::TwoPoint),
            other => Err(Error::invalid(format!("unknown phantom kind `{other}`"))),
        }
    }
}

/// Speckle density (per mm^2) giving [`SCATTERERS_PER_CELL`] scatterers per
/// resolution cell at mid-depth.
pub fn speckle_density(probe: &ProbeConfig, pulse: &PulseModel) -> f64 {
    let z_mid = 0.5 * (probe.axial_min + probe.axial_max);
    let aperture = probe.num_rx as f64 * probe.pitch;
    let lateral = probe.wavelength() * z_mid / aperture;
    let axial = pulse.axial_resolution(probe.sound_speed);
    SCATTERERS_PER_CELL / (lateral * axial * 1e6)
}

fn speckle_background(probe: &ProbeConfig) -> Region {
    Region {
        label: "background".into(),
        shape: Shape::Rect {
            x_min: -probe.half_width(),
            x_max: probe.half_width(),
            z_min: probe.axial_min,
            z_max: probe.axial_max,
        },
        density_per_mm2: speckle_density(probe, &PulseModel::for_probe(probe)),
        amplitude: 1.0,
    }
}

fn center_scanline_x(probe: &ProbeConfig) -> f64 {
    probe.scanline_x(probe.num_scanlines / 2)
}

/// Deterministic phantom for a named scenario (speckle realisation seed 0).
pub fn standard_phantom(kind: PhantomKind, probe: &ProbeConfig) -> Result<Phantom> {
    standard_phantom_seeded(kind, probe, 0)
}

/// Like [`standard_phantom`] with an explicit speckle realisation seed.
///
/// Point depths outside the probe's axial range are dropped; anechoic discs
/// whose centre lies outside it are an error.
pub fn standard_phantom_seeded(kind: PhantomKind, probe: &ProbeConfig, seed: u64) -> Result<Phantom> {
    probe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_range = |z: f64| z >= probe.axial_min && z <= probe.axial_max;
    let mut ph = Phantom::default();
    match kind {
        PhantomKind::PointTargets => {
            let x = center_scanline_x(probe);
            for mm in [20.0, 30.0, 40.0, 50.0, 60.0] {
                let z = mm * 1e-3;
                if in_range(z) {
                    ph.scatterers.push(Scatterer { x, z, amplitude: 1.0 });
                }
            }
        }
        PhantomKind::TwoPoint => {
            let z = 0.030;
            if !in_range(z) {
                return Err(Error::invalid("two_point phantom needs 30 mm inside the axial range"));
            }
            let x = center_scanline_x(probe);
            ph.scatterers.push(Scatterer { x: x - 0.5e-3, z, amplitude: 1.0 });
            ph.scatterers.push(Scatterer { x: x + 0.5e-3, z, amplitude: 1.0 });
        }
        PhantomKind::SpeckleWithAnechoic => {
            let disc = Disc { cx: 0.0, cz: 0.048, radius: 0.003 };
            if !in_range(disc.cz) {
                return Err(Error::invalid("speckle_with_anechoic needs 48 mm inside the axial range"));
            }
            ph.anechoic.push(disc);
            ph.fill_region(speckle_background(probe), probe, &mut rng);
        }
        PhantomKind::CystGrid => {
            let main = Disc { cx: 0.0, cz: 0.040, radius: 0.0075 };
            if !in_range(main.cz) {
                return Err(Error::invalid("cyst_grid needs 40 mm inside the axial range"));
            }
            ph.anechoic.push(main);
            for (k, r) in [0.0015, 0.0025].into_iter().enumerate() {
                let d = Disc {
                    cx: (k as f64 - 0.5) * 0.4 * probe.half_width(),
                    cz: 0.060,
                    radius: r,
                };
                if in_range(d.cz) {
                    ph.anechoic.push(d);
                }
            }
            ph.fill_region(speckle_background(probe), probe, &mut rng);
        }
    }
    Ok(ph)
}

/// Phantom description as read from a TOML config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    /// Optional named scenario used as the starting point.
    pub kind: Option<PhantomKind>,
    pub seed: u64,
    pub points: Vec<Scatterer>,
    pub regions: Vec<Region>,
    pub anechoic: Vec<Disc>,
}

impl PhantomSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("phantom config: {e}")))
    }

    /// Realises the spec; `frame` selects an independent speckle realisation.
    pub fn build(&self, probe: &ProbeConfig, frame: u64) -> Result<Phantom> {
        let seed = self.seed.wrapping_add(frame.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut ph = match self.kind {
            Some(kind) => standard_phantom_seeded(kind, probe, seed)?,
            None => Phantom::default(),
        };
        ph.anechoic.extend(self.anechoic.iter().copied());
        ph.scatterers.extend(self.points.iter().copied());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_F42D_4C95_7F2D);
        for region in &self.regions {
            ph.fill_region(region.clone(), probe, &mut rng);
        }
        let discs = ph.anechoic.clone();
        ph.scatterers
            .retain(|s| s.amplitude == 0.0 || !discs.iter().any(|d| d.contains(s.x, s.z)));
        ph.validate(probe)?;
        Ok(ph)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_probe() -> ProbeConfig {
        ProbeConfig {
            num_elements: 32,
            num_tx: 16,
            num_scanlines: 8,
            num_rx: 16,
            axial_min: 0.010,
            axial_max: 0.022,
            focal_depth: 0.015,
            ..ProbeConfig::default()
        }
    }

    #[test]
    fn empty_phantom_without_noise_is_silent() {
        let p = small_probe();
        let cube = simulate_rf(&Phantom::default(), &p, &PulseModel::default(), 0.0, 1).unwrap();
        assert_eq!(cube.data.dim(), (8, p.depth_samples(), 32));
        assert!(cube.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn on_axis_scatterer_peaks_at_geometric_delay() {
        let p = small_probe();
        let l0 = 3;
        let z0 = 0.016;
        let ph = Phantom {
            scatterers: vec![Scatterer { x: p.scanline_x(l0), z: z0, amplitude: 1.0 }],
            ..Default::default()
        };
        let cube = simulate_rf(&ph, &p, &PulseModel::default(), 0.0, 0).unwrap();
        for e in 0..p.num_elements {
            let xi = p.element_x(e) - p.scanline_x(l0);
            let expect = (p.sampling_freq * (z0 + (z0 * z0 + xi * xi).sqrt()) / p.sound_speed).round();
            let trace: Vec<f32> = (0..cube.depth()).map(|n| cube.data[[l0, n, e]]).collect();
            let peak = trace
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0 as f64;
            assert!((peak - expect).abs() <= 1.0, "element {e}: peak {peak}, expected {expect}");
        }
    }

    #[test]
    fn noise_statistics_match_requested_std() {
        let p = small_probe();
        let ph = Phantom {
            scatterers: vec![Scatterer { x: 0.0, z: 0.015, amplitude: 1.0 }],
            ..Default::default()
        };
        let pulse = PulseModel::default();
        let clean = simulate_rf(&ph, &p, &pulse, 0.0, 0).unwrap();
        let a = simulate_rf(&ph, &p, &pulse, 0.05, 11).unwrap();
        let b = simulate_rf(&ph, &p, &pulse, 0.05, 12).unwrap();
        assert_ne!(a.data, b.data);
        let diff: Vec<f64> = a
            .data
            .iter()
            .zip(clean.data.iter())
            .map(|(x, y)| (*x - *y) as f64)
            .collect();
        let n = diff.len() as f64;
        let mean = diff.iter().sum::<f64>() / n;
        let std = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std / 0.05 - 1.0).abs() < 0.05, "std {std}");
    }

    #[test]
    fn simulation_is_linear_in_the_phantom() {
        let p = small_probe();
        let pulse = PulseModel::default();
        let a = Phantom {
            scatterers: vec![Scatterer { x: -0.001, z: 0.013, amplitude: 0.7 }],
            ..Default::default()
        };
        let b = Phantom {
            scatterers: vec![Scatterer { x: 0.0015, z: 0.019, amplitude: -1.3 }],
            ..Default::default()
        };
        let mut ab = a.clone();
        ab.scatterers.extend(b.scatterers.iter().copied());
        let ca = simulate_rf(&a, &p, &pulse, 0.0, 0).unwrap();
        let cb = simulate_rf(&b, &p, &pulse, 0.0, 0).unwrap();
        let cab = simulate_rf(&ab, &p, &pulse, 0.0, 0).unwrap();
        for ((x, y), z) in ca.data.iter().zip(cb.data.iter()).zip(cab.data.iter()) {
            assert!((x + y - z).abs() < 1e-5);
        }
        // amplitude scaling
        let mut a3 = a.clone();
        a3.scatterers[0].amplitude *= 3.0;
        let c3 = simulate_rf(&a3, &p, &pulse, 0.0, 0).unwrap();
        for (x, y) in ca.data.iter().zip(c3.data.iter()) {
            assert!((3.0 * x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let p = small_probe();
        let ph = standard_phantom_seeded(PhantomKind::PointTargets, &ProbeConfig::default(), 0).unwrap();
        assert_eq!(ph.scatterers.len(), 5);
        let ph = Phantom {
            scatterers: vec![Scatterer { x: 0.0, z: 0.012, amplitude: 1.0 }],
            ..Default::default()
        };
        let a = simulate_rf(&ph, &p, &PulseModel::default(), 0.1, 5).unwrap();
        let b = simulate_rf(&ph, &p, &PulseModel::default(), 0.1, 5).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn out_of_view_scatterer_is_rejected() {
        let p = small_probe();
        let ph = Phantom {
            scatterers: vec![Scatterer { x: 1.0, z: 0.015, amplitude: 1.0 }],
            ..Default::default()
        };
        assert!(matches!(
            simulate_rf(&ph, &p, &PulseModel::default(), 0.0, 0),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn point_targets_sit_on_center_scanline() {
        let p = ProbeConfig::default();
        let ph = standard_phantom(PhantomKind::PointTargets, &p).unwrap();
        let depths: Vec<f64> = ph.scatterers.iter().map(|s| (s.z * 1e3).round()).collect();
        assert_eq!(depths, vec![20.0, 30.0, 40.0, 50.0, 60.0]);
        assert!(ph.scatterers.iter().all(|s| s.x == p.scanline_x(48)));
    }

    #[test]
    fn speckle_phantom_keeps_disc_empty_and_dense() {
        let p = ProbeConfig {
            axial_min: 0.044,
            axial_max: 0.052,
            ..ProbeConfig::desk()
        };
        let ph = standard_phantom(PhantomKind::SpeckleWithAnechoic, &p).unwrap();
        let disc = ph.anechoic[0];
        assert_eq!((disc.cz, disc.radius), (0.048, 0.003));
        assert!(ph.scatterers.iter().all(|s| !disc.contains(s.x, s.z)));
        // at least ten scatterers per resolution cell outside the disc
        let pulse = PulseModel::for_probe(&p);
        let cell = p.wavelength() * 0.048 / (p.num_rx as f64 * p.pitch)
            * pulse.axial_resolution(p.sound_speed);
        let area = 2.0 * p.half_width() * (p.axial_max - p.axial_min) - std::f64::consts::PI * 9e-6;
        assert!(ph.scatterers.len() as f64 >= 10.0 * area / cell * 0.95);
        ph.validate(&p).unwrap();
    }

    #[test]
    fn cyst_grid_has_fifteen_mm_cyst_at_forty_mm() {
        let p = ProbeConfig {
            axial_min: 0.030,
            axial_max: 0.050,
            ..ProbeConfig::desk()
        };
        let ph = standard_phantom(PhantomKind::CystGrid, &p).unwrap();
        let main = ph.anechoic[0];
        assert_eq!((main.cx, main.cz, 2.0 * main.radius), (0.0, 0.040, 0.015));
    }

    #[test]
    fn phantom_spec_parses_toml() {
        let spec = PhantomSpec::from_toml(
            r#"
            seed = 4
            [[points]]
            x = 0.0
            z = 0.03
            amplitude = 2.0
            [[anechoic]]
            cx = 0.0
            cz = 0.04
            radius = 0.002
            [[regions]]
            label = "inclusion"
            density_per_mm2 = 5.0
            amplitude = 0.5
            shape = { type = "disc", cx = 0.001, cz = 0.035, radius = 0.002 }
            "#,
        )
        .unwrap();
        let ph = spec.build(&ProbeConfig::desk(), 0).unwrap();
        assert_eq!(ph.scatterers[0], Scatterer { x: 0.0, z: 0.03, amplitude: 2.0 });
        assert!(ph.scatterers.len() > 20);
        assert!(PhantomSpec::from_toml("bogus = 1").is_err());
        assert!("nope".parse::<PhantomKind>().is_err());
    }
}
