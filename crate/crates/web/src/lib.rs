//! wasm-bindgen bindings behind `www/index.html`.
//!
//! A [`Scene`] simulates one small phantom once and then re-beamforms it on
//! demand, so the sliders in the page only pay for beamforming.

use deepbf::net::{ArchSpec, NetworkParams, Norm};
use deepbf::pipeline::{ImagingConfig, Method};
use deepbf::pwl::count_regions;
use deepbf::rfdata::to_gray8;
use deepbf::sim::{simulate_rf, PhantomKind, PhantomSpec, PulseModel};
use deepbf::subsample::{apply_mask, make_mask, DepthMode, SamplingScheme};
use deepbf::{ProbeConfig, RfCube};
use ndarray::Array2;
use wasm_bindgen::prelude::*;

fn js_err(e: deepbf::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn demo_probe() -> ProbeConfig {
    ProbeConfig {
        axial_min: 0.032,
        axial_max: 0.048,
        ..ProbeConfig::desk()
    }
}

#[wasm_bindgen]
pub struct Scene {
    aperture: RfCube,
    imaging: ImagingConfig,
}

#[wasm_bindgen]
impl Scene {
    /// Simulates `phantom` (e.g. `cyst_grid`) and focuses it.
    #[wasm_bindgen(constructor)]
    pub fn new(phantom: &str, seed: u32) -> Result<Scene, JsValue> {
        let probe = demo_probe();
        let kind: PhantomKind = phantom.parse().map_err(js_err)?;
        let spec = PhantomSpec { kind: Some(kind), seed: seed as u64, ..PhantomSpec::default() };
        let ph = spec.build(&probe, 0).map_err(js_err)?;
        let raw = simulate_rf(&ph, &probe, &PulseModel::for_probe(&probe), 0.0, seed as u64).map_err(js_err)?;
        let imaging = ImagingConfig::default();
        let aperture = imaging.aperture(&raw).map_err(js_err)?;
        Ok(Scene { aperture, imaging })
    }

    /// Image width in pixels (scanlines).
    pub fn width(&self) -> usize {
        self.aperture.lines()
    }

    /// Image height in pixels (axial rows).
    pub fn height(&self) -> usize {
        self.aperture.probe.axial_rows().len()
    }

    fn bmode_db(&self, method: &str, factor: f64, mask_seed: u32, dynamic_range: f64) -> Result<Array2<f64>, JsValue> {
        let method: Method = method.parse().map_err(js_err)?;
        let z = if factor > 1.0 {
            let scheme = SamplingScheme::for_factor(self.aperture.channels(), factor, DepthMode::Variable, mask_seed as u64)
                .map_err(js_err)?;
            let mask = make_mask(&scheme, self.aperture.channels(), self.aperture.depth()).map_err(js_err)?;
            apply_mask(&self.aperture, &mask).map_err(js_err)?
        } else {
            self.aperture.clone()
        };
        let imaging = ImagingConfig { dynamic_range_db: dynamic_range, ..self.imaging };
        let iq = imaging.beamform(method, &z).map_err(js_err)?;
        Ok(imaging.bmode(&iq, &z.probe))
    }

    /// Grey-level B-mode, row-major with depth running down, `width * height`
    /// bytes.
    pub fn bmode(&self, method: &str, factor: f64, mask_seed: u32, dynamic_range: f64) -> Result<Vec<u8>, JsValue> {
        let db = self.bmode_db(method, factor, mask_seed, dynamic_range)?;
        let g = to_gray8(&db, dynamic_range);
        let (lines, rows) = g.dim();
        let mut out = vec![0u8; lines * rows];
        for ((l, r), v) in g.indexed_iter() {
            out[r * lines + l] = *v;
        }
        Ok(out)
    }

    /// Lateral dB profile at the axial row nearest `depth_mm`.
    pub fn lateral_profile(&self, method: &str, factor: f64, mask_seed: u32, depth_mm: f64) -> Result<Vec<f64>, JsValue> {
        let db = self.bmode_db(method, factor, mask_seed, 60.0)?;
        let probe = &self.aperture.probe;
        let row = probe.depth_index(depth_mm * 1e-3).round().max(0.0) as usize;
        let row = row.saturating_sub(probe.axial_rows().start).min(db.dim().1 - 1);
        Ok(db.column(row).to_vec())
    }
}

/// Number of linear regions a randomly initialised network crosses along a
/// segment between two random inputs, probed with `1, 2, 4, ...` up to
/// `max_samples` points. Returns one count per probe size.
#[wasm_bindgen]
pub fn region_curve(channels: u32, seed: u32, max_samples: u32) -> Result<Vec<u32>, JsValue> {
    let arch = ArchSpec {
        in_channels: 1,
        out_channels: 2,
        stages: 1,
        convs_per_stage: 1,
        channels: channels.max(1) as usize,
        norm: Norm::None,
        bias: true,
        te: 4,
        rx: 4,
        input_skip: false,
    };
    let params = NetworkParams::xavier(arch, seed as u64).map_err(js_err)?;
    let len = arch.input_len();
    let mut state = seed as u64 ^ 0x9E37_79B9_7F4A_7C15;
    let mut next = || {
        state = deepbf::pipeline::mix(state, 1);
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let za: Vec<f64> = (0..len).map(|_| next()).collect();
    let zb: Vec<f64> = (0..len).map(|_| next()).collect();
    let mut out = Vec::new();
    let mut s = 1usize;
    while s <= max_samples.max(1) as usize {
        out.push(count_regions(&params, &za, &zb, arch.te, s).map_err(js_err)? as u32);
        s *= 2;
    }
    Ok(out)
}
