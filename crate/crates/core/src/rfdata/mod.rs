//! RF data model: probe geometry, RF cubes, channel masks and IQ images.

mod image;
mod io;

pub use image::{envelope, log_compress, read_pgm, to_gray8, write_pgm, IqImage};
pub use io::{read_cube, read_mask, write_cube, write_mask, HEADER_LEN, MAGIC, VERSION};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear-array probe and acquisition geometry.
///
/// Elements sit on the `x` axis centred at zero; scanlines are spread evenly
/// over the full element row, so the scanline spacing is
/// `num_elements * pitch / num_scanlines`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub num_elements: usize,
    pub num_tx: usize,
    pub num_scanlines: usize,
    pub num_rx: usize,
    /// Element pitch in meters.
    pub pitch: f64,
    /// Sampling frequency in Hz.
    pub sampling_freq: f64,
    /// Transmit centre frequency in Hz.
    pub center_freq: f64,
    /// Speed of sound in m/s.
    pub sound_speed: f64,
    /// Shallowest imaged depth in meters.
    pub axial_min: f64,
    /// Deepest imaged depth in meters.
    pub axial_max: f64,
    /// Transmit focal depth in meters.
    pub focal_depth: f64,
}

impl Default for ProbeConfig {
    /// L3-12H linear probe as used for the in-vivo acquisitions.
    fn default() -> Self {
        Self {
            num_elements: 192,
            num_tx: 128,
            num_scanlines: 96,
            num_rx: 64,
            pitch: 2.0e-4,
            sampling_freq: 4.0e7,
            center_freq: 8.5e6,
            sound_speed: 1540.0,
            axial_min: 0.020,
            axial_max: 0.080,
            focal_depth: 0.030,
        }
    }
}

impl ProbeConfig {
    /// A reduced geometry that keeps the pitch, sampling rate and scanline
    /// spacing of the default probe but shrinks the element row, the number
    /// of scanlines and the receive aperture so that whole experiments run
    /// on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            num_elements: 64,
            num_tx: 32,
            num_scanlines: 32,
            num_rx: 32,
            axial_min: 0.025,
            axial_max: 0.055,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(format!("probe: {m}")));
        if self.num_elements == 0 || self.num_scanlines == 0 || self.num_rx == 0 {
            return fail("element, scanline and receive counts must be positive");
        }
        if self.num_rx > self.num_elements {
            return fail("num_rx exceeds num_elements");
        }
        if self.num_tx > self.num_elements {
            return fail("num_tx exceeds num_elements");
        }
        let finite = [
            self.pitch,
            self.sampling_freq,
            self.center_freq,
            self.sound_speed,
            self.axial_min,
            self.axial_max,
            self.focal_depth,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("non-finite scalar");
        }
        if self.pitch <= 0.0 || self.sound_speed <= 0.0 || self.center_freq <= 0.0 {
            return fail("pitch, sound speed and centre frequency must be positive");
        }
        if self.sampling_freq <= 2.0 * self.center_freq {
            return fail("sampling frequency must exceed twice the centre frequency");
        }
        if self.axial_min < 0.0 || self.axial_min >= self.axial_max {
            return fail("axial range must satisfy 0 <= min < max");
        }
        if self.focal_depth <= 0.0 || self.focal_depth > self.axial_max {
            return fail("focal depth must lie in (0, axial_max]");
        }
        Ok(())
    }

    /// Lateral position of element `e`.
    pub fn element_x(&self, e: usize) -> f64 {
        (e as f64 - (self.num_elements as f64 - 1.0) / 2.0) * self.pitch
    }

    pub fn scanline_spacing(&self) -> f64 {
        self.num_elements as f64 * self.pitch / self.num_scanlines as f64
    }

    /// Lateral position of scanline `l`.
    pub fn scanline_x(&self, l: usize) -> f64 {
        (l as f64 - (self.num_scanlines as f64 - 1.0) / 2.0) * self.scanline_spacing()
    }

    /// Scanline position expressed in (fractional) element-index units.
    pub fn scanline_center_element(&self, l: usize) -> f64 {
        (self.num_elements as f64 - 1.0) / 2.0 + self.scanline_x(l) / self.pitch
    }

    /// Half-width of the lateral field of view.
    pub fn half_width(&self) -> f64 {
        self.num_elements as f64 * self.pitch / 2.0
    }

    /// Depth of sample `n` under the two-way travel convention.
    pub fn depth(&self, n: usize) -> f64 {
        n as f64 * self.sound_speed / (2.0 * self.sampling_freq)
    }

    /// Fractional sample index of depth `z`.
    pub fn depth_index(&self, z: f64) -> f64 {
        z * 2.0 * self.sampling_freq / self.sound_speed
    }

    /// Number of RF samples needed to reach `axial_max`.
    pub fn depth_samples(&self) -> usize {
        (self.depth_index(self.axial_max) - 1e-9).ceil() as usize
    }

    /// Depth rows that fall inside the axial range.
    pub fn axial_rows(&self) -> std::ops::Range<usize> {
        let start = (self.depth_index(self.axial_min) - 1e-9).ceil().max(0.0) as usize;
        start.min(self.depth_samples())..self.depth_samples()
    }

    pub fn wavelength(&self) -> f64 {
        self.sound_speed / self.center_freq
    }
}

/// Which stage of the receive chain an [`RfCube`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CubeKind {
    /// Channel data as recorded, one channel per element.
    Raw,
    /// Channel data after dynamic receive focusing, one channel per element.
    Delayed,
    /// Focused data restricted to the per-scanline receive aperture.
    Aperture,
}

impl CubeKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            CubeKind::Raw => 0,
            CubeKind::Delayed => 1,
            CubeKind::Aperture => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(CubeKind::Raw),
            1 => Some(CubeKind::Delayed),
            2 => Some(CubeKind::Aperture),
            _ => None,
        }
    }
}

/// Three-dimensional RF tensor indexed `(scanline, depth, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RfCube {
    pub kind: CubeKind,
    pub probe: ProbeConfig,
    pub data: Array3<f32>,
    /// Subsampling mask applied to this cube, if any.
    pub mask: Option<ChannelMask>,
}

impl RfCube {
    pub fn new(kind: CubeKind, probe: ProbeConfig, data: Array3<f32>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("RF cube contains non-finite samples"));
        }
        let (lines, _, channels) = data.dim();
        if lines != probe.num_scanlines {
            return Err(Error::dims(format!(
                "cube has {lines} scanlines, probe declares {}",
                probe.num_scanlines
            )));
        }
        let expected = match kind {
            CubeKind::Raw | CubeKind::Delayed => probe.num_elements,
            CubeKind::Aperture => probe.num_rx,
        };
        if channels != expected {
            return Err(Error::dims(format!(
                "{kind:?} cube has {channels} channels, expected {expected}"
            )));
        }
        Ok(Self {
            kind,
            probe,
            data,
            mask: None,
        })
    }

    pub fn zeros(kind: CubeKind, probe: ProbeConfig, depth: usize) -> Self {
        let channels = match kind {
            CubeKind::Raw | CubeKind::Delayed => probe.num_elements,
            CubeKind::Aperture => probe.num_rx,
        };
        Self {
            kind,
            probe,
            data: Array3::zeros((probe.num_scanlines, depth, channels)),
            mask: None,
        }
    }

    pub fn lines(&self) -> usize {
        self.data.dim().0
    }

    pub fn depth(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }
}

/// Active-receiver bitmap, either one row broadcast to every depth (fixed
/// scheme) or one row per depth (variable scheme).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMask {
    active: Array2<bool>,
}

impl ChannelMask {
    /// Build a mask from rows of `[rows x channels]`; `rows` is 1 for a
    /// broadcast mask.
    pub fn new(active: Array2<bool>) -> Result<Self> {
        let (rows, channels) = active.dim();
        if rows == 0 || channels == 0 {
            return Err(Error::invalid("mask must have at least one row and column"));
        }
        Ok(Self { active })
    }

    pub fn full(channels: usize) -> Self {
        Self {
            active: Array2::from_elem((1, channels), true),
        }
    }

    pub fn channels(&self) -> usize {
        self.active.ncols()
    }

    /// Number of stored rows (1 when broadcast).
    pub fn rows(&self) -> usize {
        self.active.nrows()
    }

    pub fn is_broadcast(&self) -> bool {
        self.rows() == 1
    }

    pub fn raw(&self) -> &Array2<bool> {
        &self.active
    }

    /// Mask row used at depth `n`.
    pub fn row(&self, n: usize) -> ndarray::ArrayView1<'_, bool> {
        let r = if self.is_broadcast() { 0 } else { n };
        self.active.row(r)
    }

    pub fn is_active(&self, n: usize, channel: usize) -> bool {
        self.row(n)[channel]
    }

    /// Number of active channels at depth `n`.
    pub fn keep_count(&self, n: usize) -> usize {
        self.row(n).iter().filter(|&&a| a).count()
    }

    /// Checks that this mask can be applied to a cube of the given depth and
    /// channel count.
    pub fn check_compatible(&self, depth: usize, channels: usize) -> Result<()> {
        if self.channels() != channels {
            return Err(Error::dims(format!(
                "mask has {} channels, cube has {channels}",
                self.channels()
            )));
        }
        if !self.is_broadcast() && self.rows() != depth {
            return Err(Error::dims(format!(
                "mask has {} depth rows, cube has {depth}",
                self.rows()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_probe_is_valid_and_matches_table_geometry() {
        let p = ProbeConfig::default();
        p.validate().unwrap();
        // 192 elements at 0.2 mm span 38.4 mm laterally.
        assert!((2.0 * p.half_width() - 0.0384).abs() < 1e-12);
        assert!((p.scanline_spacing() - 4.0e-4).abs() < 1e-15);
        ProbeConfig::desk().validate().unwrap();
    }

    #[test]
    fn probe_rejects_undersampling_and_oversized_aperture() {
        let mut p = ProbeConfig::default();
        p.sampling_freq = 1.5e7;
        assert!(p.validate().is_err());
        let mut p = ProbeConfig::default();
        p.num_rx = 200;
        assert!(p.validate().is_err());
    }

    #[test]
    fn depth_index_round_trips() {
        let p = ProbeConfig::default();
        let n = p.depth_index(p.depth(1234));
        assert!((n - 1234.0).abs() < 1e-9);
        assert_eq!(p.depth_samples(), (0.08 * 2.0 * 4.0e7 / 1540.0_f64).ceil() as usize);
    }

    #[test]
    fn cube_rejects_wrong_channel_count() {
        let p = ProbeConfig::desk();
        let data = Array3::zeros((p.num_scanlines, 4, p.num_rx + 1));
        assert!(matches!(
            RfCube::new(CubeKind::Aperture, p, data),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn mask_row_broadcasts() {
        let mut a = Array2::from_elem((1, 4), false);
        a[[0, 2]] = true;
        let m = ChannelMask::new(a).unwrap();
        assert!(m.is_active(17, 2));
        assert_eq!(m.keep_count(99), 1);
        m.check_compatible(123, 4).unwrap();
        assert!(m.check_compatible(123, 5).is_err());
    }
}
