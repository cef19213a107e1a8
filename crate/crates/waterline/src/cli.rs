//! Command-line surface: synthesize scenes, train the classifier, run the
//! sliding-window detector, evaluate estimates, and report architecture
//! counters. Every subcommand is deterministic given its flags and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::detect::{detect_stream, DetectorConfig, MarkMode};
use crate::error::{Error, Result};
use crate::img::{load_image, save_ppm, Image};
use crate::metrics::{evaluate_map, stability, GroundTruth, MetricReport, RecallMode, DEFAULT_LAMBDA};
use crate::net::{
    build_wldetectnet, count_conv_layers, count_flops, total_flops, total_macs, ConvCountPolicy,
    DetectNetSpec,
};
use crate::synth::{
    synth_patch_dataset, synth_scene, BoundaryModel, LabeledPatch, SceneParams, SyntheticScene,
};
use crate::train::{train_two_stage, TrainSchedule, TrainStage};
use crate::util::derive_seed;
use crate::weights::{load_weights, save_weights};
use crate::tensor::Tensor;

/// Reference figures the report compares against.
const CLAIMED_CONV_LAYERS: usize = 72;
const CLAIMED_MFLOPS: f64 = 3.12;

#[derive(Debug, Parser)]
#[command(name = "waterline", about = "Waterline detection toolkit", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Render synthetic scenes with known waterlines and a labeled patch set.
    Synth(SynthArgs),
    /// Train the detection classifier with the two-stage schedule.
    Train(TrainArgs),
    /// Slide the peephole window over frames and emit waterline maps.
    Detect(DetectArgs),
    /// Score estimated waterlines against ground-truth anchors.
    Eval(EvalArgs),
    /// Print per-layer parameter/MAC/FLOP accounting for a network scale.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    /// Full tabulated architecture.
    Full,
    /// Width / 8, single module per stage, 16x16 input.
    Desk,
}

impl Scale {
    pub fn spec(self) -> DetectNetSpec {
        match self {
            Scale::Full => DetectNetSpec::default(),
            Scale::Desk => DetectNetSpec::desk(),
        }
    }
}

impl FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::invalid(format!("unknown scale {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MarkModeArg {
    Centers,
    Polyline,
}

impl From<MarkModeArg> for MarkMode {
    fn from(m: MarkModeArg) -> MarkMode {
        match m {
            MarkModeArg::Centers => MarkMode::CentersOnly,
            MarkModeArg::Polyline => MarkMode::Polyline,
        }
    }
}

impl FromStr for MarkModeArg {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centers" => Ok(MarkModeArg::Centers),
            "polyline" => Ok(MarkModeArg::Polyline),
            other => Err(Error::invalid(format!("unknown mark mode {other:?}"))),
        }
    }
}

/// Flags every subcommand shares.
#[derive(Debug, Args)]
struct Shared {
    /// Master seed; every random stream is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (or file, for eval/report CSV).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plain-text key=value config file; command-line flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for the detector scan (default: machine parallelism).
    #[arg(long)]
    workers: Option<usize>,
}

/// Detection-geometry flags (defaults r=60, s=30, h=s, f=1, lambda=10).
#[derive(Debug, Args)]
struct FieldFlags {
    /// Observing-field side in pixels.
    #[arg(long)]
    r: Option<usize>,
    /// Recognizing-field side in pixels.
    #[arg(long)]
    s: Option<usize>,
    /// Scan stride in pixels (default: s).
    #[arg(long)]
    stride: Option<usize>,
    /// Take every f-th frame.
    #[arg(long)]
    sample_rate: Option<usize>,
    /// Matching distance threshold in pixels.
    #[arg(long)]
    lambda: Option<f64>,
    /// Weight file path.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// How marks become an estimate: centers | polyline.
    #[arg(long)]
    mark_mode: Option<MarkModeArg>,
    /// Network scale preset: full | desk.
    #[arg(long)]
    scale: Option<Scale>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    shared: Shared,
    #[command(flatten)]
    fields: FieldFlags,
    /// Number of scenes to render.
    #[arg(long, default_value_t = 3)]
    scenes: usize,
    #[arg(long, default_value_t = 192)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    /// Uniform per-pixel noise amplitude in intensity units.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Water ripple amplitude in intensity units.
    #[arg(long, default_value_t = 0.0)]
    ripple: f64,
    /// Land speckle amplitude in intensity units.
    #[arg(long, default_value_t = 0.0)]
    speckle: f64,
    /// Waterline-positive patches in the emitted dataset.
    #[arg(long, default_value_t = 30)]
    pos: usize,
    /// Non-waterline patches in the emitted dataset.
    #[arg(long, default_value_t = 30)]
    neg: usize,
    /// Side of the emitted patch tensors (default: the scale preset's input).
    #[arg(long)]
    patch_size: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    shared: Shared,
    /// Stage-1 patch dataset (calm-scene curriculum).
    #[arg(long)]
    stage1: PathBuf,
    /// Stage-2 patch dataset (harder curriculum).
    #[arg(long)]
    stage2: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs1: usize,
    #[arg(long, default_value_t = 10)]
    epochs2: usize,
    #[arg(long, default_value_t = 1e-5)]
    lr1: f64,
    #[arg(long, default_value_t = 2e-6)]
    lr2: f64,
    #[arg(long, default_value_t = 60)]
    batch: usize,
    /// Global L2 gradient-norm clip (off by default).
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Network scale preset: full | desk.
    #[arg(long)]
    scale: Option<Scale>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    shared: Shared,
    #[command(flatten)]
    fields: FieldFlags,
    /// Scene directory holding manifest.txt and the frame images.
    #[arg(long)]
    frames: PathBuf,
    /// Classify with the scene geometry instead of trained weights.
    #[arg(long, default_value_t = false)]
    oracle: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    shared: Shared,
    /// Marks CSV produced by `detect`.
    #[arg(long)]
    marks: PathBuf,
    /// Anchors CSV produced by `synth`.
    #[arg(long)]
    anchors: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    /// Recall definition: literal | coverage.
    #[arg(long, default_value = "literal")]
    recall_mode: String,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    shared: Shared,
    /// Network scale preset: full | desk.
    #[arg(long)]
    scale: Option<Scale>,
}

/// Entry point for the binary.
pub fn run<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::invalid(e.to_string()))?;
    match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Detect(a) => cmd_detect(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Report(a) => cmd_report(a),
    }
}

// ---------------------------------------------------------------------------
// Config-file resolution: flag > config file > default
// ---------------------------------------------------------------------------

struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Format(format!(
                        "{}:{}: expected key=value, got {line:?}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                values.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(ConfigFile { values })
    }

    fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::invalid(format!("config key {key}: cannot parse {raw:?}"))),
            None => Ok(default),
        }
    }

    fn get_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::invalid(format!("config key {key}: cannot parse {raw:?}"))),
            None => Ok(None),
        }
    }
}

struct ResolvedShared {
    seed: u64,
    out: PathBuf,
    config: ConfigFile,
}

fn resolve_shared(shared: &Shared, default_out: &str) -> Result<ResolvedShared> {
    let config = ConfigFile::load(shared.config.as_deref())?;
    let seed = config.get(shared.seed, "seed", 0)?;
    let out = config.get(shared.out.clone(), "out", PathBuf::from(default_out))?;
    if let Some(workers) = config.get_opt(shared.workers, "workers")? {
        // at most one global pool; later subcommand invocations in-process
        // keep the first size
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    Ok(ResolvedShared { seed, out, config })
}

struct ResolvedFields {
    r: usize,
    s: usize,
    stride: usize,
    sample_rate: usize,
    weights: Option<PathBuf>,
    mark_mode: MarkMode,
    scale: Scale,
}

fn resolve_fields(fields: &FieldFlags, config: &ConfigFile) -> Result<ResolvedFields> {
    let r = config.get(fields.r, "r", 60)?;
    let s = config.get(fields.s, "s", 30)?;
    Ok(ResolvedFields {
        r,
        s,
        stride: config.get(fields.stride, "stride", s)?,
        sample_rate: config.get(fields.sample_rate, "sample_rate", 1)?,
        weights: config.get_opt(fields.weights.clone(), "weights")?,
        mark_mode: config
            .get(fields.mark_mode, "mark_mode", MarkModeArg::Polyline)?
            .into(),
        scale: config.get(fields.scale, "scale", Scale::Desk)?,
    })
}

// ---------------------------------------------------------------------------
// Manifest and CSV plumbing
// ---------------------------------------------------------------------------

fn boundary_to_string(b: &BoundaryModel) -> String {
    match b {
        BoundaryModel::Horizontal { y } => format!("horizontal:{y}"),
        BoundaryModel::Sloped { y0, slope } => format!("sloped:{y0}:{slope}"),
        BoundaryModel::Sinusoidal {
            mean,
            amplitude,
            period,
            phase,
        } => format!("sinusoidal:{mean}:{amplitude}:{period}:{phase}"),
    }
}

fn parse_boundary(text: &str) -> Result<BoundaryModel> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |i: usize| -> Result<f64> {
        parts
            .get(i)
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad boundary spec {text:?}")))
    };
    match parts[0] {
        "horizontal" if parts.len() == 2 => Ok(BoundaryModel::Horizontal { y: num(1)? }),
        "sloped" if parts.len() == 3 => Ok(BoundaryModel::Sloped {
            y0: num(1)?,
            slope: num(2)?,
        }),
        "sinusoidal" if parts.len() == 5 => Ok(BoundaryModel::Sinusoidal {
            mean: num(1)?,
            amplitude: num(2)?,
            period: num(3)?,
            phase: num(4)?,
        }),
        _ => Err(Error::Format(format!("bad boundary spec {text:?}"))),
    }
}

/// One rendered frame as listed in a scene manifest.
pub struct ManifestScene {
    pub frame_file: String,
    pub boundary: BoundaryModel,
    pub seed: u64,
}

pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub scenes: Vec<ManifestScene>,
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.txt");
    let cfg = ConfigFile::load(Some(&path))?;
    let need = |key: &str| -> Result<&String> {
        cfg.values
            .get(key)
            .ok_or_else(|| Error::Format(format!("{}: missing key {key}", path.display())))
    };
    let width = need("width")?.parse().map_err(|_| Error::Format("bad width".into()))?;
    let height = need("height")?.parse().map_err(|_| Error::Format("bad height".into()))?;
    let count: usize = need("scenes")?.parse().map_err(|_| Error::Format("bad scene count".into()))?;
    let mut scenes = Vec::with_capacity(count);
    for i in 0..count {
        scenes.push(ManifestScene {
            frame_file: need(&format!("scene.{i}.frame"))?.clone(),
            boundary: parse_boundary(need(&format!("scene.{i}.boundary"))?)?,
            seed: need(&format!("scene.{i}.seed"))?
                .parse()
                .map_err(|_| Error::Format("bad scene seed".into()))?,
        });
    }
    Ok(Manifest {
        width,
        height,
        scenes,
    })
}

fn csv_field(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "NA".to_string(),
    }
}

// ---------------------------------------------------------------------------
// Patch dataset file: "WLPS" magic, version, count, channels, size, records.
// ---------------------------------------------------------------------------

pub fn save_patches(patches: &[LabeledPatch], path: &Path) -> Result<()> {
    let (channels, size) = match patches.first() {
        Some(p) => {
            let (c, h, w) = p.patch.chw()?;
            if h != w {
                return Err(Error::invalid("patches must be square".to_string()));
            }
            (c, h)
        }
        None => (0, 0),
    };
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"WLPS");
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&(patches.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(channels as u32).to_le_bytes());
    bytes.extend_from_slice(&(size as u32).to_le_bytes());
    for p in patches {
        if p.patch.shape() != [channels, size, size] {
            return Err(Error::shape("mixed patch shapes in one dataset".to_string()));
        }
        bytes.push(p.label);
        for v in p.patch.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_patches(path: &Path) -> Result<Vec<LabeledPatch>> {
    let bytes = fs::read(path)?;
    let fail = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 20 || &bytes[..4] != b"WLPS" {
        return Err(fail("not a patch dataset file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    if word(4) != 1 {
        return Err(fail("unsupported version"));
    }
    let (count, channels, size) = (word(8), word(12), word(16));
    let record = 1 + 8 * channels * size * size;
    if bytes.len() != 20 + count * record {
        return Err(fail("truncated patch dataset"));
    }
    let mut out = Vec::with_capacity(count);
    for rec in bytes[20..].chunks_exact(record) {
        let label = rec[0];
        if label > 1 {
            return Err(fail("label outside {0,1}"));
        }
        let data: Vec<f64> = rec[1..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(LabeledPatch {
            patch: Tensor::new(vec![channels, size, size], data)?,
            label,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

/// Seeded per-scene boundary: a sinusoid whose swing stays inside the margin.
fn scene_boundary(width: usize, height: usize, margin: usize, seed: u64) -> BoundaryModel {
    // cheap hash-driven parameters; full rendering noise is seeded separately
    let h = |tag: &str| derive_seed(seed, tag);
    let interior = (height - 2 * margin) as f64;
    let amplitude = 2.0 + (h("amp") % 1000) as f64 / 1000.0 * (interior / 4.0 - 2.0).max(0.0);
    let mean = height as f64 / 2.0 + ((h("mean") % 1000) as f64 / 1000.0 - 0.5) * (interior / 4.0);
    BoundaryModel::Sinusoidal {
        mean,
        amplitude,
        period: width as f64 / (1.0 + (h("period") % 3) as f64),
        phase: (h("phase") % 628) as f64 / 100.0,
    }
}

fn cmd_synth(args: SynthArgs) -> Result<String> {
    let shared = resolve_shared(&args.shared, "synth-out")?;
    let fields = resolve_fields(&args.fields, &shared.config)?;
    let patch_size = args.patch_size.unwrap_or(fields.scale.spec().input_size);
    fs::create_dir_all(&shared.out)?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "width={}", args.width);
    let _ = writeln!(manifest, "height={}", args.height);
    let _ = writeln!(manifest, "scenes={}", args.scenes);
    let _ = writeln!(manifest, "seed={}", shared.seed);
    let mut anchors_csv = String::from("frame,x,y\n");
    let mut patches = Vec::new();
    for i in 0..args.scenes {
        let scene_seed = derive_seed(shared.seed, &format!("scene.{i}"));
        let params = SceneParams {
            width: args.width,
            height: args.height,
            boundary: scene_boundary(args.width, args.height, 30, scene_seed),
            noise: args.noise,
            ripple: args.ripple,
            speckle: args.speckle,
            seed: scene_seed,
            ..SceneParams::default()
        };
        let scene = synth_scene(&params)?;
        let frame_file = format!("frame_{i:04}.ppm");
        save_ppm(&scene.image, &shared.out.join(&frame_file))?;
        for &(x, y) in &scene.anchors {
            let _ = writeln!(anchors_csv, "{i},{x},{y}");
        }
        let _ = writeln!(manifest, "scene.{i}.seed={scene_seed}");
        let _ = writeln!(manifest, "scene.{i}.frame={frame_file}");
        let _ = writeln!(
            manifest,
            "scene.{i}.boundary={}",
            boundary_to_string(&params.boundary)
        );
        patches.extend(patch_share(
            &scene, args.pos, args.neg, args.scenes, i, fields.r, fields.s, patch_size,
            derive_seed(shared.seed, &format!("patches.{i}")),
        )?);
    }
    let _ = writeln!(manifest, "patches.count={}", patches.len());
    fs::write(shared.out.join("manifest.txt"), manifest)?;
    fs::write(shared.out.join("anchors.csv"), anchors_csv)?;
    save_patches(&patches, &shared.out.join("patches.bin"))?;
    Ok(format!(
        "wrote {} scenes and {} patches to {}",
        args.scenes,
        patches.len(),
        shared.out.display()
    ))
}

/// Scene i's share of an n_pos/n_neg dataset spread over `scenes` scenes.
#[allow(clippy::too_many_arguments)]
fn patch_share(
    scene: &SyntheticScene,
    n_pos: usize,
    n_neg: usize,
    scenes: usize,
    index: usize,
    r: usize,
    s: usize,
    out_size: usize,
    seed: u64,
) -> Result<Vec<LabeledPatch>> {
    let share = |total: usize| total / scenes + usize::from(index < total % scenes);
    synth_patch_dataset(scene, share(n_pos), share(n_neg), r, s, out_size, seed)
}

fn cmd_train(args: TrainArgs) -> Result<String> {
    let shared = resolve_shared(&args.shared, "train-out")?;
    let scale: Scale = shared.config.get(args.scale, "scale", Scale::Desk)?;
    fs::create_dir_all(&shared.out)?;
    let stage1 = load_patches(&args.stage1)?;
    let stage2 = load_patches(&args.stage2)?;
    let mut net = build_wldetectnet(&scale.spec(), derive_seed(shared.seed, "init"))?;
    let schedule = TrainSchedule {
        batch_size: args.batch,
        stages: vec![
            TrainStage {
                epochs: args.epochs1,
                learning_rate: args.lr1,
                seed: derive_seed(shared.seed, "stage1"),
            },
            TrainStage {
                epochs: args.epochs2,
                learning_rate: args.lr2,
                seed: derive_seed(shared.seed, "stage2"),
            },
        ],
        grad_clip: args.grad_clip,
    };
    let result = train_two_stage(&mut net, &schedule, &stage1, &stage2)?;
    let mut csv = String::from("stage,epoch,mean_loss,accuracy\n");
    for rec in &result.history {
        let _ = writeln!(
            csv,
            "{},{},{:.6},{:.6}",
            rec.stage, rec.epoch, rec.mean_loss, rec.accuracy
        );
    }
    fs::write(shared.out.join("loss.csv"), csv)?;
    if let Some(reason) = result.aborted {
        return Err(Error::Numeric(format!(
            "training aborted ({reason}); partial history in {}",
            shared.out.join("loss.csv").display()
        )));
    }
    save_weights(&net, &shared.out.join("weights.wld"))?;
    let last = result.history.last();
    Ok(format!(
        "trained {} epochs, final accuracy {}, weights in {}",
        result.history.len(),
        csv_field(last.map(|r| r.accuracy)),
        shared.out.display()
    ))
}

fn cmd_detect(args: DetectArgs) -> Result<String> {
    let shared = resolve_shared(&args.shared, "detect-out")?;
    let fields = resolve_fields(&args.fields, &shared.config)?;
    fs::create_dir_all(&shared.out)?;
    let manifest = load_manifest(&args.frames)?;
    let frames: Vec<Image> = manifest
        .scenes
        .iter()
        .map(|s| load_image(&args.frames.join(&s.frame_file)))
        .collect::<Result<_>>()?;
    let config = DetectorConfig {
        r: fields.r,
        s: fields.s,
        stride: fields.stride,
        sample_rate: fields.sample_rate,
        mark_mode: fields.mark_mode,
    };

    let maps = if args.oracle {
        // geometry stand-in: per-frame boundary drives the classification
        let mut maps = Vec::new();
        for (idx, frame) in frames.iter().enumerate() {
            if !crate::detect::sample_indices(frames.len(), config.sample_rate).contains(&idx) {
                continue;
            }
            let boundary = &manifest.scenes[idx].boundary;
            let classifier = |_: &Tensor, center: (usize, usize)| -> Result<f64> {
                Ok(if crate::synth::oracle_classifier(center, fields.s, boundary) {
                    1.0
                } else {
                    0.0
                })
            };
            let marks = crate::detect::scan_frame(frame, &config, fields.r, &classifier)?;
            maps.push(crate::detect::connect_marks(idx, &marks, config.mark_mode));
        }
        maps
    } else {
        let weights_path = fields.weights.as_ref().ok_or_else(|| {
            Error::invalid("detect needs --weights (or --oracle)".to_string())
        })?;
        let mut net = build_wldetectnet(&fields.scale.spec(), 0)?;
        load_weights(&mut net, weights_path)?;
        let patch_size = net.spec.input_size;
        let classifier =
            |patch: &Tensor, _: (usize, usize)| -> Result<f64> { net.waterline_prob(patch) };
        detect_stream(&frames, &config, patch_size, &classifier)?
    };

    let mut csv = String::from("frame,kind,x,y\n");
    for map in &maps {
        for &(x, y) in &map.marks {
            let _ = writeln!(csv, "{},mark,{x},{y}", map.frame_index);
        }
        for &(x, y) in &map.polyline {
            let _ = writeln!(csv, "{},polyline,{x},{y}", map.frame_index);
        }
        for &(x, y) in &map.estimate {
            let _ = writeln!(csv, "{},estimate,{x},{y}", map.frame_index);
        }
        let scene = &manifest.scenes[map.frame_index];
        let gt: Vec<(i64, i64)> = (0..manifest.width as i64)
            .map(|x| (x, scene.boundary.row(x)))
            .collect();
        let annotated = crate::detect::annotate(&frames[map.frame_index], map, Some(&gt));
        save_ppm(&annotated, &shared.out.join(format!("map_{:04}.ppm", map.frame_index)))?;
    }
    fs::write(shared.out.join("marks.csv"), csv)?;
    Ok(format!(
        "detected over {} frames into {}",
        maps.len(),
        shared.out.display()
    ))
}

fn read_points_csv(path: &Path, want_kind: Option<&str>) -> Result<BTreeMap<usize, Vec<(i64, i64)>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let has_kind = header.split(',').any(|h| h == "kind");
    let mut out: BTreeMap<usize, Vec<(i64, i64)>> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let fail = || Error::Format(format!("{}:{}: bad row {line:?}", path.display(), lineno + 2));
        let (frame, kind, x, y) = if has_kind {
            if cols.len() != 4 {
                return Err(fail());
            }
            (cols[0], Some(cols[1]), cols[2], cols[3])
        } else {
            if cols.len() != 3 {
                return Err(fail());
            }
            (cols[0], None, cols[1], cols[2])
        };
        if let (Some(want), Some(kind)) = (want_kind, kind) {
            if kind != want {
                continue;
            }
        }
        let frame: usize = frame.parse().map_err(|_| fail())?;
        let x: i64 = x.parse().map_err(|_| fail())?;
        let y: i64 = y.parse().map_err(|_| fail())?;
        out.entry(frame).or_default().push((x, y));
    }
    Ok(out)
}

fn cmd_eval(args: EvalArgs) -> Result<String> {
    let shared = resolve_shared(&args.shared, "report.csv")?;
    let lambda = shared.config.get(args.lambda, "lambda", DEFAULT_LAMBDA)?;
    let mode = match args.recall_mode.as_str() {
        "literal" => RecallMode::Literal,
        "coverage" => RecallMode::GtCoverage,
        other => return Err(Error::invalid(format!("unknown recall mode {other:?}"))),
    };
    let estimates = read_points_csv(&args.marks, Some("estimate"))?;
    let anchors = read_points_csv(&args.anchors, None)?;

    let mut csv = String::from(
        "frame,precision,recall,f1,fp,irrelevance,estimate_count,gt_count\n",
    );
    let mut mismatched = Vec::new();
    let mut f1_samples = Vec::new();
    let empty: Vec<(i64, i64)> = Vec::new();
    for (&frame, anchor_pts) in &anchors {
        let estimate = estimates.get(&frame).unwrap_or(&empty);
        let gt = GroundTruth::new(anchor_pts.clone())?;
        let report = evaluate_map(estimate, &gt, lambda, mode);
        append_report_row(&mut csv, &frame.to_string(), &report);
        if let Some(f) = report.f1 {
            f1_samples.push(f);
        }
    }
    for &frame in estimates.keys() {
        if !anchors.contains_key(&frame) {
            let _ = writeln!(csv, "{frame},NA,NA,NA,NA,NA,NA,NA");
            mismatched.push(frame);
        }
    }
    let f1_stability = if f1_samples.len() >= 2 {
        Some(stability(&f1_samples)?)
    } else {
        None
    };
    let _ = writeln!(csv, "stability:f1,{},,,,,,", csv_field(f1_stability));
    fs::write(&shared.out, &csv)?;
    print!("{csv}");
    if !mismatched.is_empty() {
        return Err(Error::invalid(format!(
            "frames {mismatched:?} have marks but no anchors"
        )));
    }
    Ok(format!("evaluated {} frames into {}", anchors.len(), shared.out.display()))
}

fn append_report_row(csv: &mut String, frame: &str, r: &MetricReport) {
    let _ = writeln!(
        csv,
        "{frame},{},{},{},{},{},{},{}",
        csv_field(r.precision),
        csv_field(r.recall),
        csv_field(r.f1),
        r.fp,
        csv_field(r.irrelevance),
        r.estimate_count,
        r.gt_count
    );
}

fn cmd_report(args: ReportArgs) -> Result<String> {
    let shared = resolve_shared(&args.shared, "arch.csv")?;
    let scale: Scale = shared.config.get(args.scale, "scale", Scale::Full)?;
    let spec = scale.spec();
    let rows = count_flops(&spec)?;
    let mut csv = String::from("name,kind,macs,flops,params\n");
    let mut text = format!(
        "{:<16} {:>8} {:>12} {:>12} {:>10}\n",
        "layer", "kind", "MACs", "FLOPs", "params"
    );
    for row in &rows {
        let _ = writeln!(csv, "{},{},{},{},{}", row.name, row.kind, row.macs, row.flops, row.params);
        let _ = writeln!(
            text,
            "{:<16} {:>8} {:>12} {:>12} {:>10}",
            row.name, row.kind, row.macs, row.flops, row.params
        );
    }
    let macs = total_macs(&rows);
    let flops = total_flops(&rows);
    let params: u64 = rows.iter().map(|r| r.params).sum();
    let _ = writeln!(csv, "total,,{macs},{flops},{params}");
    let _ = writeln!(
        text,
        "{:<16} {:>8} {:>12} {:>12} {:>10}",
        "total", "", macs, flops, params
    );
    let conv_only = count_conv_layers(&spec, ConvCountPolicy::ConvOnly);
    let with_se = count_conv_layers(&spec, ConvCountPolicy::IncludeSeFc);
    let mflops = flops as f64 / 1e6;
    let deviation = (mflops - CLAIMED_MFLOPS).abs() / CLAIMED_MFLOPS;
    // the reference claims describe the full-scale network only
    if scale == Scale::Full {
        let _ = writeln!(
            text,
            "conv layers: {conv_only} (conv only), {with_se} (counting SE FC layers); reference claim: {CLAIMED_CONV_LAYERS}"
        );
        let _ = writeln!(
            text,
            "compute: {mflops:.2} MFLOPs ({macs} MACs); reference claim: about {CLAIMED_MFLOPS} MFLOPs -- {}",
            if deviation > 0.05 { "DEVIATES" } else { "consistent" }
        );
    } else {
        let _ = writeln!(
            text,
            "conv layers: {conv_only} (conv only), {with_se} (counting SE FC layers)"
        );
        let _ = writeln!(text, "compute: {mflops:.2} MFLOPs ({macs} MACs)");
    }
    fs::write(&shared.out, csv)?;
    Ok(text)
}
