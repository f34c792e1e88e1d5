//! Receive-channel subsampling masks.
//!
//! Random masks always keep the centre pair `C/2 - 1, C/2` and draw the
//! remaining channels without replacement from the others. Variable masks
//! draw every depth row from its own ChaCha stream `(seed, n)`, so a row can
//! be regenerated on its own and masks are identical on every platform.

use ndarray::{Array2, Array3, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rfdata::{ChannelMask, CubeKind, RfCube};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Random,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    /// One pattern for every depth.
    Fixed,
    /// A fresh pattern per depth row.
    #[default]
    Variable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingScheme {
    pub keep: usize,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub depth_mode: DepthMode,
    #[serde(default)]
    pub seed: u64,
}

impl SamplingScheme {
    pub fn random(keep: usize, depth_mode: DepthMode, seed: u64) -> Self {
        Self {
            keep,
            selection: Selection::Random,
            depth_mode,
            seed,
        }
    }

    /// Scheme keeping `channels / factor` channels (rounded).
    pub fn for_factor(channels: usize, factor: f64, depth_mode: DepthMode, seed: u64) -> Result<Self> {
        if !(factor >= 1.0) {
            return Err(Error::invalid(format!("subsampling factor {factor} is below 1")));
        }
        let keep = ((channels as f64 / factor).round() as usize).max(1);
        Ok(Self::random(keep, depth_mode, seed))
    }

    /// Subsampling factor `C / keep`.
    pub fn factor(&self, channels: usize) -> f64 {
        channels as f64 / self.keep as f64
    }

    fn validate(&self, channels: usize) -> Result<()> {
        if self.keep == 0 || self.keep > channels {
            return Err(Error::invalid(format!(
                "keep count {} must lie in 1..={channels}",
                self.keep
            )));
        }
        if self.selection == Selection::Random && self.keep < channels && self.keep < 2 {
            return Err(Error::invalid("random selection keeps the centre pair, so keep must be >= 2"));
        }
        Ok(())
    }
}

/// The two always-kept channels of a random mask.
pub fn center_pair(channels: usize) -> (usize, usize) {
    (channels / 2 - 1, channels / 2)
}

fn random_row(channels: usize, keep: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut row = vec![false; channels];
    let (a, b) = center_pair(channels);
    row[a] = true;
    row[b] = true;
    let mut others: Vec<usize> = (0..channels).filter(|&c| c != a && c != b).collect();
    // partial Fisher-Yates
    for i in 0..keep - 2 {
        let j = rng.random_range(i..others.len());
        others.swap(i, j);
        row[others[i]] = true;
    }
    row
}

fn uniform_row(channels: usize, keep: usize) -> Vec<bool> {
    let mut row = vec![false; channels];
    for k in 0..keep {
        let offset = (k as f64 * channels as f64 / keep as f64).round() as usize;
        row[(channels / 2 + offset) % channels] = true;
    }
    row
}

/// Mask row for depth `n` (row 0 for fixed schemes).
pub fn mask_row(scheme: &SamplingScheme, channels: usize, n: usize) -> Result<Vec<bool>> {
    scheme.validate(channels)?;
    if scheme.keep == channels {
        return Ok(vec![true; channels]);
    }
    Ok(match scheme.selection {
        Selection::Uniform => uniform_row(channels, scheme.keep),
        Selection::Random => {
            let stream = match scheme.depth_mode {
                DepthMode::Fixed => 0,
                DepthMode::Variable => n as u64,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(scheme.seed);
            rng.set_stream(stream);
            random_row(channels, scheme.keep, &mut rng)
        }
    })
}

/// Builds the mask for `depth` rows of `channels` channels. Fixed and
/// uniform schemes return a single broadcast row.
pub fn make_mask(scheme: &SamplingScheme, channels: usize, depth: usize) -> Result<ChannelMask> {
    scheme.validate(channels)?;
    let per_row = scheme.keep < channels
        && scheme.selection == Selection::Random
        && scheme.depth_mode == DepthMode::Variable;
    let rows = if per_row { depth.max(1) } else { 1 };
    let mut active = Array2::from_elem((rows, channels), false);
    for (n, mut r) in active.axis_iter_mut(Axis(0)).enumerate() {
        for (dst, src) in r.iter_mut().zip(mask_row(scheme, channels, n)?) {
            *dst = src;
        }
    }
    ChannelMask::new(active)
}

/// Zeroes inactive channels and attaches the mask.
pub fn apply_mask(z: &RfCube, mask: &ChannelMask) -> Result<RfCube> {
    if z.kind != CubeKind::Aperture {
        return Err(Error::invalid(format!("expected an aperture cube, got {:?}", z.kind)));
    }
    mask.check_compatible(z.depth(), z.channels())?;
    let mut data: Array3<f32> = z.data.clone();
    for (n, mut plane) in data.axis_iter_mut(Axis(1)).enumerate() {
        let row = mask.row(n);
        for mut line in plane.axis_iter_mut(Axis(0)) {
            Zip::from(&mut line).and(&row).for_each(|v, &a| {
                if !a {
                    *v = 0.0;
                }
            });
        }
    }
    Ok(RfCube {
        data,
        mask: Some(mask.clone()),
        ..z.clone()
    })
}
