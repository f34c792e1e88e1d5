use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deepbf::error::{Error, ErrorClass, Result};
use deepbf::focusing::{EdgeMode, Interp};
use deepbf::metrics::{evaluate, RoiPair};
use deepbf::net::{
    infer_frame, depth_scale, masked_slab, read_dataset, read_weights, train, write_dataset, write_weights,
};
use deepbf::pipeline::{
    arch_for, dataset_build, metrics_long_csv, run_pipeline, ExperimentConfig, ImagingConfig, Method, MetricRow,
};
use deepbf::pwl::{count_regions, exactness_residual, extract_pwl};
use deepbf::rfdata::{read_cube, read_mask, read_pgm, to_gray8, write_cube, write_mask, write_pgm};
use deepbf::sim::{simulate_rf, PhantomKind, PhantomSpec, PulseModel};
use deepbf::subsample::{apply_mask, make_mask, DepthMode, SamplingScheme, Selection};
use deepbf::{CubeKind, IqImage, ProbeConfig, RfCube};
use ndarray::Array2;

#[derive(Parser)]
#[command(name = "deepbf", version, about = "Adaptive and compressive ultrasound beamforming")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a raw RF cube from a phantom.
    Simulate(SimulateArgs),
    /// Apply receive delays and cut per-scanline apertures.
    Focus(FocusArgs),
    /// Drop receive channels from an aperture cube.
    Subsample(SubsampleArgs),
    /// Form a B-mode image with a classical beamformer.
    Beamform(BeamformArgs),
    /// Train a network and write its weights.
    Train(TrainArgs),
    /// Form a B-mode image with a trained network.
    Infer(InferArgs),
    /// Score a test image against a reference.
    Metrics(MetricsArgs),
    /// Piecewise-linear analysis of a trained network on one slab.
    AnalyzePwl(PwlArgs),
    /// Run a method x factor sweep and write its artifact tree.
    Sweep(SweepArgs),
    /// Build a training and validation sample archive.
    Dataset(DatasetArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (TOML); supplies probe and imaging settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::from_file(p),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Named phantom or a phantom TOML file; defaults to the config's phantom.
    #[arg(long)]
    phantom: Option<String>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Speckle realisation.
    #[arg(long, default_value_t = 0)]
    frame: u64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct FocusArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// Receive aperture size C.
    #[arg(long = "rx")]
    rx: Option<usize>,
    #[arg(long, default_value = "linear")]
    interp: Interp,
    /// zero or shift.
    #[arg(long, default_value = "zero")]
    edge: EdgeMode,
}

#[derive(Args)]
struct SubsampleArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, conflicts_with = "keep")]
    factor: Option<f64>,
    #[arg(long)]
    keep: Option<usize>,
    #[arg(long, default_value = "random")]
    selection: String,
    #[arg(long, default_value = "variable")]
    depth_mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the mask on its own.
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

#[derive(Args)]
struct BeamformArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value = "das")]
    method: Method,
    /// MVBF subaperture length.
    #[arg(long = "K", default_value_t = 16)]
    k: usize,
    /// MVBF diagonal loading, relative to the mean eigenvalue.
    #[arg(long, default_value_t = 1e-2)]
    loading: f64,
    /// Channel mask applied before beamforming.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 60.0)]
    dynamic_range: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Directory holding train.ubfd and val.ubfd; built from the config when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
    /// CSV of per-epoch training and validation loss.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    dynamic_range: f64,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long, required_unless_present = "batch")]
    reference: Option<PathBuf>,
    #[arg(long, required_unless_present = "batch")]
    test: Option<PathBuf>,
    /// Labelled ROI image: 1 background, 2 anechoic.
    #[arg(long)]
    roi: Option<PathBuf>,
    /// Sweep output directory; prints a factor,method,metric,value table.
    #[arg(long, conflicts_with_all = ["reference", "test"])]
    batch: Option<PathBuf>,
    #[arg(long, default_value_t = 60.0)]
    dynamic_range: f64,
}

#[derive(Args)]
struct PwlArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Aperture cube (masked or full).
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Depth row of the probed slab; defaults to the middle axial row.
    #[arg(long)]
    depth: Option<usize>,
    /// Other end of the probed segment; defaults to `depth + 1`.
    #[arg(long)]
    to_depth: Option<usize>,
    /// Transmit events of the slab, starting at the first scanline.
    #[arg(long)]
    te: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
}

fn cube_of_kind(path: &Path, kind: CubeKind) -> Result<RfCube> {
    let c = read_cube(path)?;
    if c.kind != kind {
        return Err(Error::invalid(format!("{} holds a {:?} cube, expected {kind:?}", path.display(), c.kind)));
    }
    Ok(c)
}

fn aperture_with_mask(input: &Path, mask: Option<&PathBuf>) -> Result<RfCube> {
    let z = cube_of_kind(input, CubeKind::Aperture)?;
    match mask {
        Some(m) => apply_mask(&z, &read_mask(m)?),
        None => Ok(z),
    }
}

/// B-mode of the axial rows with depth running down the image.
fn write_bmode(iq: &IqImage, probe: &ProbeConfig, dynamic_range: f64, out: &Path) -> Result<()> {
    let imaging = ImagingConfig { dynamic_range_db: dynamic_range, ..ImagingConfig::default() };
    let db = imaging.bmode(iq, probe);
    write_pgm(&to_gray8(&db.t().to_owned(), dynamic_range), out)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let phantom = match &a.phantom {
        None => cfg.phantom.clone(),
        Some(p) if p.ends_with(".toml") => PhantomSpec::from_toml(&fs::read_to_string(p)?)?,
        Some(p) => PhantomSpec { kind: Some(p.parse::<PhantomKind>()?), seed: cfg.phantom.seed, ..PhantomSpec::default() },
    };
    let ph = phantom.build(&cfg.probe, a.frame)?;
    let cube = simulate_rf(&ph, &cfg.probe, &PulseModel::for_probe(&cfg.probe), a.noise.unwrap_or(cfg.noise_std), a.seed)?;
    write_cube(&cube, &a.out)
}

fn focus_cmd(a: FocusArgs) -> Result<()> {
    let mut raw = cube_of_kind(&a.input, CubeKind::Raw)?;
    if let Some(c) = a.rx {
        raw.probe.num_rx = c;
        raw.probe.validate()?;
    }
    let imaging = ImagingConfig { interp: a.interp, edge: a.edge, ..ImagingConfig::default() };
    write_cube(&imaging.aperture(&raw)?, &a.out)
}

fn subsample(a: SubsampleArgs) -> Result<()> {
    let z = cube_of_kind(&a.input, CubeKind::Aperture)?;
    let selection: Selection = match a.selection.as_str() {
        "random" => Selection::Random,
        "uniform" => Selection::Uniform,
        s => return Err(Error::invalid(format!("unknown selection `{s}`"))),
    };
    let depth_mode = match a.depth_mode.as_str() {
        "fixed" => DepthMode::Fixed,
        "variable" => DepthMode::Variable,
        s => return Err(Error::invalid(format!("unknown depth mode `{s}`"))),
    };
    let keep = match (a.keep, a.factor) {
        (Some(k), _) => k,
        (None, Some(f)) => SamplingScheme::for_factor(z.channels(), f, depth_mode, a.seed)?.keep,
        (None, None) => return Err(Error::invalid("give --factor or --keep")),
    };
    let scheme = SamplingScheme { keep, selection, depth_mode, seed: a.seed };
    let mask = make_mask(&scheme, z.channels(), z.depth())?;
    if let Some(p) = &a.mask_out {
        write_mask(&mask, &z.probe, p)?;
    }
    write_cube(&apply_mask(&z, &mask)?, &a.out)
}

fn beamform_cmd(a: BeamformArgs) -> Result<()> {
    let z = aperture_with_mask(&a.input, a.mask.as_ref())?;
    let mut imaging = ImagingConfig { dynamic_range_db: a.dynamic_range, ..ImagingConfig::default() };
    imaging.mv.subaperture = a.k;
    imaging.mv.diag_loading = a.loading;
    imaging.validate()?;
    let iq = imaging.beamform(a.method, &z)?;
    write_bmode(&iq, &z.probe, a.dynamic_range, &a.out)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let (tr, va) = match &a.dataset {
        Some(dir) => (read_dataset(dir.join("train.ubfd"))?, read_dataset(dir.join("val.ubfd"))?),
        None => dataset_build(&cfg)?,
    };
    let arch = arch_for(&cfg);
    let (params, report) = train(&tr, &va, arch, &cfg.train)?;
    write_weights(&params, &a.out)?;
    if let Some(p) = &a.trace {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for (e, l) in report.loss_trace.iter().enumerate() {
            let v = report.val_trace.get(e).map(|v| format!("{v:.8}")).unwrap_or_default();
            s.push_str(&format!("{e},{l:.8},{v}\n"));
        }
        fs::write(p, s)?;
    }
    println!("final_train_loss = {:.8}", report.loss_trace.last().copied().unwrap_or(f64::NAN));
    if let Some(v) = report.val_trace.last() {
        println!("final_val_loss = {v:.8}");
    }
    println!("parameters = {}", params.param_count());
    Ok(())
}

fn infer_cmd(a: InferArgs) -> Result<()> {
    let params = read_weights(&a.weights)?;
    let z = aperture_with_mask(&a.input, a.mask.as_ref())?;
    let iq = infer_frame(&params, &z, Some(z.probe.axial_rows()))?;
    write_bmode(&iq, &z.probe, a.dynamic_range, &a.out)
}

/// Display image (depth down) back to a dB image indexed `[line, depth]`.
fn pgm_to_db(path: &Path, dynamic_range: f64) -> Result<Array2<f64>> {
    let g = read_pgm(path)?;
    Ok(g.t().mapv(|v| v as f64 / 255.0 * dynamic_range - dynamic_range))
}

fn print_report(r: &deepbf::metrics::MetricReport) {
    println!("psnr_db = {}", r.psnr);
    println!("ssim = {}", r.ssim);
    println!("cr_db = {}", r.cr);
    println!("cnr = {}", r.cnr);
    println!("gcnr = {}", r.gcnr);
}

fn metrics_cmd(a: MetricsArgs) -> Result<()> {
    let cfg = deepbf::metrics::MetricsConfig::default();
    if let Some(dir) = &a.batch {
        return metrics_batch(dir, a.dynamic_range, a.roi.as_ref());
    }
    let (Some(reference), Some(test)) = (&a.reference, &a.test) else {
        return Err(Error::invalid("give --reference and --test, or --batch"));
    };
    let r = pgm_to_db(reference, a.dynamic_range)?;
    let t = pgm_to_db(test, a.dynamic_range)?;
    let roi = a.roi.as_ref().map(RoiPair::read_pgm).transpose()?;
    print_report(&evaluate(&r, &t, roi.as_ref(), a.dynamic_range, &cfg)?);
    Ok(())
}

fn metrics_batch(dir: &Path, dynamic_range: f64, roi: Option<&PathBuf>) -> Result<()> {
    let cfg = deepbf::metrics::MetricsConfig::default();
    let roi_path = roi.cloned().unwrap_or_else(|| dir.join("roi.pgm"));
    let roi = if roi_path.exists() { Some(RoiPair::read_pgm(&roi_path)?) } else { None };
    let mut names: Vec<String> = fs::read_dir(dir.join("images"))?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.ends_with(".pgm") && !n.starts_with("reference_"))
        .collect();
    names.sort();
    let mut rows: Vec<MetricRow> = Vec::new();
    for name in names {
        let stem = name.trim_end_matches(".pgm");
        let parts: Vec<&str> = stem.rsplitn(3, '_').collect();
        if parts.len() != 3 || !parts[1].starts_with('x') || !parts[0].starts_with('f') {
            continue;
        }
        let factor: f64 = parts[1][1..]
            .parse()
            .map_err(|_| Error::Format(format!("bad factor in image name {name}")))?;
        let frame = parts[0];
        let method = parts[2].replace('_', "+");
        let reference = pgm_to_db(&dir.join(format!("images/reference_{frame}.pgm")), dynamic_range)?;
        let test = pgm_to_db(&dir.join("images").join(&name), dynamic_range)?;
        let r = evaluate(&reference, &test, roi.as_ref(), dynamic_range, &cfg)?;
        match rows.iter_mut().find(|row| row.method == method && row.factor == factor) {
            Some(row) => {
                let n = row.frames as f64;
                let mix = |a: f64, b: f64| (a * n + b) / (n + 1.0);
                row.report.psnr = mix(row.report.psnr, r.psnr);
                row.report.ssim = mix(row.report.ssim, r.ssim);
                row.report.cr = mix(row.report.cr, r.cr);
                row.report.cnr = mix(row.report.cnr, r.cnr);
                row.report.gcnr = mix(row.report.gcnr, r.gcnr);
                row.frames += 1;
            }
            None => rows.push(MetricRow { factor, method, frames: 1, report: r }),
        }
    }
    print!("{}", metrics_long_csv(&rows));
    Ok(())
}

fn analyze_pwl(a: PwlArgs) -> Result<()> {
    let params = read_weights(&a.weights)?;
    let z = aperture_with_mask(&a.input, a.mask.as_ref())?;
    let rows = z.probe.axial_rows();
    let n = a.depth.unwrap_or((rows.start + rows.end) / 2);
    let m = a.to_depth.unwrap_or(n + 1);
    if n >= z.depth() || m >= z.depth() {
        return Err(Error::invalid("probe depth lies outside the cube"));
    }
    let lines = z.lines();
    let rx = z.channels();
    let te = a.te.unwrap_or(lines).min(lines);
    let planes = params.arch.in_channels;
    let input = |d: usize| {
        let x = masked_slab(&z, d, planes);
        let s = depth_scale(&z, d);
        let inv = if s > 0.0 { 1.0 / s } else { 0.0 };
        let mut out = Vec::with_capacity(planes * te * rx);
        for p in 0..planes {
            out.extend(x[p * lines * rx..(p * lines + te) * rx].iter().map(|v| v * inv));
        }
        out
    };
    let za = input(n);
    let zb = input(m);
    let map = extract_pwl(&params, &za, te)?;
    let residual = exactness_residual(&params, &map, &za, te)?;
    let regions = count_regions(&params, &za, &zb, te, a.samples)?;
    println!("region_id = \"{}\"", map.region_id);
    println!("tie = {}", map.masks.tie);
    println!("input_dim = {}", map.in_dim);
    println!("output_dim = {}", map.out_dim);
    println!("residual = {residual:e}");
    println!("operator_norm = {}", map.frobenius_norm());
    println!("segment = [{n}, {m}]");
    println!("samples = {}", a.samples);
    println!("regions_on_segment = {regions}");
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_file(&a.config)?;
    let rep = run_pipeline(&cfg, &a.out)?;
    println!("config_hash = \"{}\"", rep.config_hash);
    println!("cells = {}", rep.rows.len() + rep.failures.len());
    println!("failures = {}", rep.failures.len());
    for f in &rep.failures {
        eprintln!("cell {} x{} failed: {}", f.method, f.factor, f.error);
    }
    Ok(())
}

fn dataset(a: DatasetArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_file(&a.config)?;
    let (tr, va) = dataset_build(&cfg).map_err(|e| e.in_stage("dataset", &cfg.hash()))?;
    fs::create_dir_all(&a.out)?;
    write_dataset(&tr, a.out.join("train.ubfd"))?;
    if !va.is_empty() {
        write_dataset(&va, a.out.join("val.ubfd"))?;
    }
    println!("train = {}", tr.len());
    println!("val = {}", va.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Focus(a) => focus_cmd(a),
        Cmd::Subsample(a) => subsample(a),
        Cmd::Beamform(a) => beamform_cmd(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Infer(a) => infer_cmd(a),
        Cmd::Metrics(a) => metrics_cmd(a),
        Cmd::AnalyzePwl(a) => analyze_pwl(a),
        Cmd::Sweep(a) => sweep(a),
        Cmd::Dataset(a) => dataset(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Numerical => 3,
                ErrorClass::Io => 4,
            })
        }
    }
}
