//! Experiment orchestration: simulated frames, training sets, method ×
//! factor sweeps and the artifact tree they write.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beamform::{das, deconvolve, mvbf, DeconvKernel, MvConfig};
use crate::error::{Error, Result};
use crate::focusing::{focus, ApertureSpec, EdgeMode, Interp};
use crate::iq::{hilbert_fir, to_analytic};
use crate::metrics::{evaluate, MetricReport, MetricsConfig, RoiPair};
use crate::net::{extract_sample, infer_frame, read_weights, ArchSpec, NetworkParams, TrainConfig, TrainingSample};
use crate::par;
use crate::rfdata::{to_gray8, write_cube, write_mask, write_pgm, CubeKind, IqImage, ProbeConfig, RfCube};
use crate::sim::{simulate_rf, Disc, PhantomKind, PhantomSpec, PulseModel};
use crate::subsample::{apply_mask, make_mask, DepthMode, SamplingScheme, Selection};

/// Classical beamformers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Method {
    #[default]
    Das,
    Mvbf,
    DasDeconv,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "das" => Ok(Method::Das),
            "mvbf" => Ok(Method::Mvbf),
            "das+deconv" => Ok(Method::DasDeconv),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Das => "das",
            Method::Mvbf => "mvbf",
            Method::DasDeconv => "das+deconv",
        })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A method in a sweep: a classical beamformer or a trained network
/// loaded from a `UBFW` file (`deepbf:<path>`).
#[derive(Debug, Clone, PartialEq)]
pub enum MethodSpec {
    Classic(Method),
    DeepBf(PathBuf),
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::Classic(m) => m.to_string(),
            MethodSpec::DeepBf(_) => "deepbf".into(),
        }
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("deepbf:") {
            Some(path) if !path.is_empty() => Ok(MethodSpec::DeepBf(PathBuf::from(path))),
            Some(_) => Err(Error::invalid("deepbf method needs a checkpoint: `deepbf:<path>`")),
            None => Ok(MethodSpec::Classic(s.parse()?)),
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodSpec::Classic(m) => m.fmt(f),
            MethodSpec::DeepBf(p) => write!(f, "deepbf:{}", p.display()),
        }
    }
}

impl Serialize for MethodSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Settings shared by every image-forming stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingConfig {
    pub interp: Interp,
    pub edge: EdgeMode,
    pub hilbert_taps: usize,
    pub mv: MvConfig,
    pub deconv_taps: usize,
    pub deconv_reg: f64,
    pub dynamic_range_db: f64,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self {
            interp: Interp::Linear,
            edge: EdgeMode::ZeroPad,
            hilbert_taps: crate::iq::DEFAULT_HILBERT_LEN,
            mv: MvConfig::default(),
            deconv_taps: 31,
            deconv_reg: 0.05,
            dynamic_range_db: 60.0,
        }
    }
}

impl ImagingConfig {
    pub fn validate(&self) -> Result<()> {
        self.mv.validate()?;
        if self.deconv_taps % 2 == 0 {
            return Err(Error::invalid("deconv_taps must be odd"));
        }
        if !(self.deconv_reg > 0.0) {
            return Err(Error::invalid("deconv_reg must be positive"));
        }
        if !(self.dynamic_range_db > 0.0) {
            return Err(Error::invalid("dynamic_range_db must be positive"));
        }
        hilbert_fir(self.hilbert_taps).map(|_| ())
    }

    /// Raw cube to aperture cube with the configured windows and interpolation.
    pub fn aperture(&self, raw: &RfCube) -> Result<RfCube> {
        let spec = ApertureSpec::centered(&raw.probe, self.edge)?;
        focus(raw, &spec, self.interp)
    }

    /// IQ image of a (possibly masked) aperture cube. MVBF shortens its
    /// subaperture to half the smallest active channel count when needed,
    /// so the covariance always averages at least two subapertures.
    pub fn beamform(&self, method: Method, z: &RfCube) -> Result<IqImage> {
        let hilbert = hilbert_fir(self.hilbert_taps)?;
        let lines = match method {
            Method::Das => das(z, None)?,
            Method::Mvbf => {
                let active = match &z.mask {
                    Some(m) => (0..m.rows()).map(|n| m.keep_count(n)).min().unwrap_or(0),
                    None => z.channels(),
                };
                let mv = MvConfig {
                    subaperture: self.mv.subaperture.min((active / 2).max(1)),
                    ..self.mv
                };
                mvbf(z, &mv, None)?
            }
            Method::DasDeconv => {
                let pulse = PulseModel::for_probe(&z.probe);
                let kernel = DeconvKernel::wiener(&pulse, z.probe.sampling_freq, self.deconv_taps, self.deconv_reg)?;
                deconvolve(&das(z, None)?, &kernel)
            }
        };
        let mut iq = to_analytic(&lines, &hilbert)?;
        iq.dynamic_range_db = self.dynamic_range_db;
        Ok(iq)
    }

    /// B-mode image (dB) of the axial rows of the probe.
    pub fn bmode(&self, iq: &IqImage, probe: &ProbeConfig) -> Array2<f64> {
        let mut img = iq.crop_depth(probe.axial_rows());
        img.dynamic_range_db = self.dynamic_range_db;
        img.bmode_db()
    }
}

/// Training-set construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train_samples: usize,
    pub val_samples: usize,
    /// Simulated frames; one in six (at least one) is held out for validation.
    pub frames: usize,
    /// Transmit events per sample.
    pub te: usize,
    /// Depth planes per slab.
    pub planes: usize,
    /// Subsampling factors drawn uniformly per sample.
    pub factors: Vec<f64>,
    /// Phantoms cycled over the frames.
    pub phantoms: Vec<PhantomSpec>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let kind = |k| PhantomSpec { kind: Some(k), ..PhantomSpec::default() };
        Self {
            train_samples: 3000,
            val_samples: 600,
            frames: 6,
            te: 16,
            planes: 3,
            factors: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            phantoms: vec![kind(PhantomKind::SpeckleWithAnechoic), kind(PhantomKind::CystGrid)],
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self, probe: &ProbeConfig) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::invalid("a dataset needs at least two frames (train and validation)"));
        }
        if self.train_samples == 0 {
            return Err(Error::invalid("train_samples must be positive"));
        }
        if self.te == 0 || self.te > probe.num_scanlines {
            return Err(Error::invalid("dataset te must lie in 1..=num_scanlines"));
        }
        if self.planes == 0 {
            return Err(Error::invalid("dataset planes must be positive"));
        }
        if self.factors.is_empty() || self.factors.iter().any(|f| !(*f >= 1.0)) {
            return Err(Error::invalid("dataset factors must be non-empty and >= 1"));
        }
        if self.phantoms.is_empty() {
            return Err(Error::invalid("dataset needs at least one phantom"));
        }
        Ok(())
    }

    pub fn val_frames(&self) -> usize {
        (self.frames / 6).max(1)
    }
}

/// Everything one sweep or dataset build depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub noise_std: f64,
    /// Evaluation frames (independent speckle and noise realisations).
    pub frames: usize,
    pub factors: Vec<f64>,
    pub selection: Selection,
    pub depth_mode: DepthMode,
    pub methods: Vec<MethodSpec>,
    /// Full-data beamformer used as reference image and training target.
    pub reference: Method,
    /// Write aperture cubes and masks next to the images.
    pub write_cubes: bool,
    pub probe: ProbeConfig,
    pub phantom: PhantomSpec,
    pub imaging: ImagingConfig,
    pub metrics: MetricsConfig,
    pub dataset: DatasetConfig,
    pub arch: ArchSpec,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let probe = ProbeConfig::desk();
        Self {
            seed: 0,
            noise_std: 0.0,
            frames: 1,
            factors: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            selection: Selection::Random,
            depth_mode: DepthMode::Variable,
            methods: vec![MethodSpec::Classic(Method::Das)],
            reference: Method::Das,
            write_cubes: true,
            probe,
            phantom: PhantomSpec {
                kind: Some(PhantomKind::CystGrid),
                ..PhantomSpec::default()
            },
            imaging: ImagingConfig::default(),
            metrics: MetricsConfig::default(),
            dataset: DatasetConfig::default(),
            arch: ArchSpec::desk(probe.num_scanlines, probe.num_rx),
            train: TrainConfig::desk(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::invalid(format!("experiment config: {e}")))?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config always serialises")
    }

    /// Short hash of the canonical serialisation.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.probe.validate()?;
        self.imaging.validate()?;
        self.metrics.validate()?;
        self.train.validate()?;
        self.arch.validate()?;
        if self.methods.is_empty() {
            return Err(Error::invalid("methods must not be empty"));
        }
        if self.factors.is_empty() || self.factors.iter().any(|f| !(*f >= 1.0)) {
            return Err(Error::invalid("factors must be non-empty and >= 1"));
        }
        if self.frames == 0 {
            return Err(Error::invalid("frames must be at least 1"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be finite and >= 0"));
        }
        for m in &self.methods {
            if let MethodSpec::DeepBf(p) = m {
                if !p.exists() {
                    return Err(Error::invalid(format!("checkpoint {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Sampling scheme for the `k`-th factor; the seed does not depend on
    /// the frame, so every frame sees the same masks.
    pub fn scheme(&self, k: usize) -> Result<SamplingScheme> {
        let mut s = SamplingScheme::for_factor(self.probe.num_rx, self.factors[k], self.depth_mode, mix(self.seed, 0x5C4E + k as u64))?;
        s.selection = self.selection;
        Ok(s)
    }
}

/// Splits a seed into independent child seeds.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulates and focuses one frame of `phantom`.
pub fn simulate_frame(
    probe: &ProbeConfig,
    phantom: &PhantomSpec,
    frame: u64,
    noise_std: f64,
    seed: u64,
    imaging: &ImagingConfig,
) -> Result<RfCube> {
    let ph = phantom.build(probe, frame)?;
    let raw = simulate_rf(&ph, probe, &PulseModel::for_probe(probe), noise_std, mix(seed, 0xF0 + frame))?;
    imaging.aperture(&raw)
}

/// Builds the training and validation sets: random slabs across frames,
/// depths, scanline windows and the configured factors, each with a fresh
/// random variable-depth mask and a full-data target.
pub fn dataset_build(cfg: &ExperimentConfig) -> Result<(Vec<TrainingSample>, Vec<TrainingSample>)> {
    let frames = dataset_frames(cfg)?;
    dataset_from_frames(cfg, &frames)
}

/// Simulated full-data aperture cubes and their targets for every dataset
/// frame.
pub fn dataset_frames(cfg: &ExperimentConfig) -> Result<Vec<(RfCube, IqImage)>> {
    let d = &cfg.dataset;
    cfg.probe.validate()?;
    cfg.imaging.validate()?;
    d.validate(&cfg.probe)?;
    (0..d.frames)
        .map(|frame| {
            let spec = &d.phantoms[frame % d.phantoms.len()];
            let full = simulate_frame(&cfg.probe, spec, frame as u64, cfg.noise_std, mix(cfg.seed, 0xDA7A), &cfg.imaging)?;
            let target = cfg.imaging.beamform(cfg.reference, &full)?;
            Ok((full, target))
        })
        .collect()
}

/// Draws the sample sets from pre-simulated frames; the last
/// `val_frames()` frames are held out for validation.
pub fn dataset_from_frames(
    cfg: &ExperimentConfig,
    frames: &[(RfCube, IqImage)],
) -> Result<(Vec<TrainingSample>, Vec<TrainingSample>)> {
    let d = &cfg.dataset;
    d.validate(&cfg.probe)?;
    if frames.len() != d.frames {
        return Err(Error::invalid(format!("dataset needs {} frames, got {}", d.frames, frames.len())));
    }
    let split = d.frames - d.val_frames();
    let train = build_split(cfg, &frames[..split], 0, d.train_samples, 1)?;
    let val = build_split(cfg, &frames[split..], split, d.val_samples, 2)?;
    Ok((train, val))
}

fn build_split(
    cfg: &ExperimentConfig,
    frames: &[(RfCube, IqImage)],
    first_frame: usize,
    count: usize,
    stream: u64,
) -> Result<Vec<TrainingSample>> {
    let d = &cfg.dataset;
    let probe = &cfg.probe;
    let rows = probe.axial_rows();
    if rows.is_empty() {
        return Err(Error::invalid("probe has no axial rows"));
    }
    let nf = frames.len();
    let mut out: Vec<Option<TrainingSample>> = vec![None; count];
    for (fi, (full, target)) in frames.iter().enumerate() {
        let frame = first_frame + fi;
        let ks: Vec<usize> = (fi..count).step_by(nf).collect();
        if ks.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0xD5));
        rng.set_stream(stream * 1_000_003 + frame as u64);
        for k in ks {
            loop {
                let n = rng.random_range(rows.clone());
                let te_start = rng.random_range(0..=probe.num_scanlines - d.te);
                let factor = d.factors[rng.random_range(0..d.factors.len())];
                let scheme = SamplingScheme::for_factor(probe.num_rx, factor, DepthMode::Variable, rng.random())?;
                if let Some(s) = extract_sample(full, target, n, d.planes, &scheme, te_start, d.te)? {
                    out[k] = Some(s);
                    break;
                }
            }
        }
    }
    Ok(out.into_iter().map(|s| s.expect("every sample index is assigned a frame")).collect())
}

/// Architecture sized for the dataset: inputs of `planes` channels over
/// the probe's receive aperture.
pub fn arch_for(cfg: &ExperimentConfig) -> ArchSpec {
    ArchSpec {
        in_channels: cfg.dataset.planes,
        te: cfg.dataset.te,
        rx: cfg.probe.num_rx,
        ..cfg.arch
    }
}

/// One line of the metrics table, averaged over frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub factor: f64,
    pub method: String,
    pub frames: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub factor: f64,
    pub method: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub config_hash: String,
    pub rows: Vec<MetricRow>,
    pub failures: Vec<CellFailure>,
}

impl PipelineReport {
    pub fn row(&self, method: &str, factor: f64) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method && r.factor == factor)
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

/// Label used in file names: `1`, `2`, `2.5`.
pub fn factor_label(f: f64) -> String {
    if f.fract() == 0.0 {
        format!("{}", f as u64)
    } else {
        format!("{f}")
    }
}

fn file_label(method: &str) -> String {
    method.replace('+', "_")
}

struct Cell {
    factor_index: usize,
    method_index: usize,
}

enum Beamformer {
    Classic(Method),
    Net(Box<NetworkParams>),
}

struct CellOutput {
    report: MetricReport,
    bmode: Array2<f64>,
}

/// Profiles through a disc centre: lateral (all scanlines at the centre
/// depth) and axial (all axial rows on the nearest scanline).
fn profiles(probe: &ProbeConfig, bmode: &Array2<f64>, disc: &Disc) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let rows = probe.axial_rows();
    let (lines, depth) = bmode.dim();
    let r = (probe.depth_index(disc.cz).round() as i64 - rows.start as i64).clamp(0, depth as i64 - 1) as usize;
    let l = (0..lines)
        .min_by(|a, b| {
            (probe.scanline_x(*a) - disc.cx)
                .abs()
                .total_cmp(&(probe.scanline_x(*b) - disc.cx).abs())
        })
        .unwrap_or(0);
    let lateral = (0..lines).map(|k| (probe.scanline_x(k) * 1e3, bmode[[k, r]])).collect();
    let axial = (0..depth).map(|k| (probe.depth(rows.start + k) * 1e3, bmode[[l, k]])).collect();
    (lateral, axial)
}

/// Runs the sweep and writes its artifact tree into `out`:
///
/// ```text
/// config.toml  config_hash.txt  metrics.csv  failures.csv
/// profiles_lateral.csv  profiles_axial.csv  roi.pgm
/// images/<method>_x<factor>_f<frame>.pgm   reference_f<frame>.pgm
/// cubes/aperture_f<frame>.ubf  masks/x<factor>.ubf   (with write_cubes)
/// ```
///
/// A failing cell is recorded in `failures.csv` and the sweep carries on;
/// errors outside the cells abort with the stage name and config hash.
pub fn run_pipeline(cfg: &ExperimentConfig, out: impl AsRef<Path>) -> Result<PipelineReport> {
    let hash = cfg.hash();
    let stage = |name: &'static str| {
        let hash = hash.clone();
        move |e: Error| e.in_stage(name, &hash)
    };
    cfg.validate().map_err(stage("config"))?;
    let out = out.as_ref();
    fs::create_dir_all(out.join("images")).map_err(|e| Error::from(e)).map_err(stage("output"))?;
    if cfg.write_cubes {
        fs::create_dir_all(out.join("cubes")).map_err(Error::from).map_err(stage("output"))?;
        fs::create_dir_all(out.join("masks")).map_err(Error::from).map_err(stage("output"))?;
    }
    fs::write(out.join("config.toml"), cfg.to_toml()).map_err(Error::from).map_err(stage("output"))?;
    fs::write(out.join("config_hash.txt"), format!("{hash}\n")).map_err(Error::from).map_err(stage("output"))?;

    let beamformers: Vec<Beamformer> = cfg
        .methods
        .iter()
        .map(|m| match m {
            MethodSpec::Classic(c) => Ok(Beamformer::Classic(*c)),
            MethodSpec::DeepBf(p) => read_weights(p).map(|w| Beamformer::Net(Box::new(w))),
        })
        .collect::<Result<_>>()
        .map_err(stage("load"))?;
    let schemes: Vec<SamplingScheme> = (0..cfg.factors.len())
        .map(|k| cfg.scheme(k))
        .collect::<Result<_>>()
        .map_err(stage("subsample"))?;
    let probe = &cfg.probe;
    let rows = probe.axial_rows();
    let first_phantom = cfg.phantom.build(probe, 0).map_err(stage("simulate"))?;
    let discs = first_phantom.anechoic.clone();
    let roi = match discs.first() {
        Some(d) => Some(RoiPair::around_disc(probe, rows.clone(), d).map_err(stage("roi"))?),
        None => None,
    };
    if let Some(roi) = &roi {
        roi.write_pgm(out.join("roi.pgm")).map_err(stage("roi"))?;
    }

    let cells: Vec<Cell> = (0..cfg.factors.len())
        .flat_map(|f| (0..cfg.methods.len()).map(move |m| Cell { factor_index: f, method_index: m }))
        .collect();
    let mut sums: Vec<Option<(MetricReport, usize)>> = vec![None; cells.len()];
    let mut errors: Vec<Option<String>> = vec![None; cells.len()];
    let mut lateral = String::from("factor,method,cyst,x_mm,db\n");
    let mut axial = String::from("factor,method,cyst,z_mm,db\n");

    for frame in 0..cfg.frames {
        let full = simulate_frame(probe, &cfg.phantom, frame as u64, cfg.noise_std, cfg.seed, &cfg.imaging)
            .map_err(stage("simulate"))?;
        if cfg.write_cubes {
            write_cube(&full, out.join(format!("cubes/aperture_f{frame}.ubf"))).map_err(stage("focus"))?;
        }
        let reference = cfg.imaging.beamform(cfg.reference, &full).map_err(stage("reference"))?;
        let ref_db = cfg.imaging.bmode(&reference, probe);
        write_pgm(&to_gray8(&ref_db.t().to_owned(), cfg.imaging.dynamic_range_db), out.join(format!("images/reference_f{frame}.pgm")))
            .map_err(stage("reference"))?;
        let masked: Vec<Result<RfCube>> = schemes
            .iter()
            .zip(&cfg.factors)
            .map(|(s, f)| {
                let mask = make_mask(s, probe.num_rx, full.depth())?;
                if frame == 0 && cfg.write_cubes {
                    write_mask(&mask, probe, out.join(format!("masks/x{}.ubf", factor_label(*f))))?;
                }
                apply_mask(&full, &mask)
            })
            .collect();
        let results = par::map_range(cells.len(), |ci| -> Result<CellOutput> {
            let cell = &cells[ci];
            let z = masked[cell.factor_index].as_ref().map_err(|e| Error::invalid(e.to_string()))?;
            let iq = match &beamformers[cell.method_index] {
                Beamformer::Classic(m) => cfg.imaging.beamform(*m, z).map_err(|e| e.in_stage("beamform", &hash))?,
                Beamformer::Net(p) => infer_frame(p, z, Some(rows.clone())).map_err(|e| e.in_stage("infer", &hash))?,
            };
            let bmode = cfg.imaging.bmode(&iq, probe);
            let report = evaluate(&ref_db, &bmode, roi.as_ref(), cfg.imaging.dynamic_range_db, &cfg.metrics)
                .map_err(|e| e.in_stage("metrics", &hash))?;
            Ok(CellOutput { report, bmode })
        });
        for (ci, res) in results.into_iter().enumerate() {
            let cell = &cells[ci];
            let factor = cfg.factors[cell.factor_index];
            let label = cfg.methods[cell.method_index].label();
            match res {
                Err(e) => {
                    errors[ci].get_or_insert_with(|| format!("frame {frame}: {e}"));
                }
                Ok(o) => {
                    let name = format!("images/{}_x{}_f{frame}.pgm", file_label(&label), factor_label(factor));
                    if let Err(e) = write_pgm(&to_gray8(&o.bmode.t().to_owned(), cfg.imaging.dynamic_range_db), out.join(name)) {
                        errors[ci].get_or_insert_with(|| format!("frame {frame}: {}", e.in_stage("output", &hash)));
                        continue;
                    }
                    let acc = sums[ci].get_or_insert((
                        MetricReport { cr: 0.0, cnr: 0.0, gcnr: 0.0, psnr: 0.0, ssim: 0.0 },
                        0,
                    ));
                    acc.0.cr += o.report.cr;
                    acc.0.cnr += o.report.cnr;
                    acc.0.gcnr += o.report.gcnr;
                    acc.0.psnr += o.report.psnr;
                    acc.0.ssim += o.report.ssim;
                    acc.1 += 1;
                    if frame == 0 {
                        for (k, d) in discs.iter().enumerate() {
                            let (lat, ax) = profiles(probe, &o.bmode, d);
                            for (x, v) in lat {
                                lateral.push_str(&format!("{},{label},cyst{k},{x:.4},{}\n", factor_label(factor), fmt_num(v)));
                            }
                            for (z, v) in ax {
                                axial.push_str(&format!("{},{label},cyst{k},{z:.4},{}\n", factor_label(factor), fmt_num(v)));
                            }
                        }
                    }
                }
            }
        }
    }

    let mut rows_out = Vec::new();
    let mut failures = Vec::new();
    let mut metrics = String::from("factor,method,frames,psnr_db,ssim,cr_db,cnr,gcnr\n");
    let mut fail_csv = String::from("factor,method,error\n");
    for (ci, cell) in cells.iter().enumerate() {
        let factor = cfg.factors[cell.factor_index];
        let label = cfg.methods[cell.method_index].label();
        if let Some(e) = &errors[ci] {
            fail_csv.push_str(&format!("{},{label},\"{}\"\n", factor_label(factor), e.replace('"', "'")));
            failures.push(CellFailure { factor, method: label, error: e.clone() });
            continue;
        }
        let (s, n) = sums[ci].expect("a cell without errors has results");
        let k = n as f64;
        let report = MetricReport { cr: s.cr / k, cnr: s.cnr / k, gcnr: s.gcnr / k, psnr: s.psnr / k, ssim: s.ssim / k };
        metrics.push_str(&format!(
            "{},{label},{n},{},{},{},{},{}\n",
            factor_label(factor),
            fmt_num(report.psnr),
            fmt_num(report.ssim),
            fmt_num(report.cr),
            fmt_num(report.cnr),
            fmt_num(report.gcnr)
        ));
        rows_out.push(MetricRow { factor, method: label, frames: n, report });
    }
    let write = |name: &str, text: &str| -> Result<()> {
        let mut f = fs::File::create(out.join(name))?;
        f.write_all(text.as_bytes())?;
        Ok(())
    };
    write("metrics.csv", &metrics).map_err(stage("output"))?;
    write("failures.csv", &fail_csv).map_err(stage("output"))?;
    write("profiles_lateral.csv", &lateral).map_err(stage("output"))?;
    write("profiles_axial.csv", &axial).map_err(stage("output"))?;
    Ok(PipelineReport { config_hash: hash, rows: rows_out, failures })
}

/// Long-format metrics table `factor,method,metric,value` for a set of rows.
pub fn metrics_long_csv(rows: &[MetricRow]) -> String {
    let mut by_key: BTreeMap<(String, String), &MetricRow> = BTreeMap::new();
    for r in rows {
        by_key.insert((format!("{:020.6}", r.factor), r.method.clone()), r);
    }
    let mut s = String::from("factor,method,metric,value\n");
    for r in by_key.values() {
        let f = factor_label(r.factor);
        for (name, v) in [
            ("psnr_db", r.report.psnr),
            ("ssim", r.report.ssim),
            ("cr_db", r.report.cr),
            ("cnr", r.report.cnr),
            ("gcnr", r.report.gcnr),
        ] {
            s.push_str(&format!("{f},{},{name},{}\n", r.method, fmt_num(v)));
        }
    }
    s
}

/// Checks that a cube is an aperture cube of this probe.
pub fn check_aperture(z: &RfCube) -> Result<()> {
    if z.kind != CubeKind::Aperture {
        return Err(Error::invalid(format!("expected an aperture cube, got {:?}", z.kind)));
    }
    Ok(())
}
