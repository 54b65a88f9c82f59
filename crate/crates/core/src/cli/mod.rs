//! The `neused` command line: argument parsing, command implementations and
//! the exit-code contract.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | internal or I/O failure |
//! | 2 | invalid configuration, dataset or argument |
//! | 3 | remote denoiser unreachable after the retry budget |
//! | 4 | checkpoint file not found |
//! | 5 | checkpoint unreadable or of the wrong stage |

pub mod manifest;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

pub use manifest::RunManifest;

use crate::diffusion::{AnalyticDenoiser, Denoiser, DiffusionError, GaussianPrior, RemoteDenoiser};
use crate::fields::checkpoint::{load_checkpoint, save_checkpoint, write_atomic, CheckpointError, CheckpointHeader};
use crate::fields::{sdf_gradient, AnalyticForeground, AnalyticScene, EvalMode, FieldBundle, Foreground, NormalMode, SkyBackground};
use crate::geometry::{
    export_mesh, load_dataset, marching_cubes, orbit_cameras, spherical_poses, synthetic_dataset, write_dataset,
    CameraPath, GeometryError, MeshFormat,
};
use crate::imageio::{write_png, ImageError, RgbImage};
use crate::render::{render_image, Camera, Intrinsics, RenderSettings, RenderedImage};
use crate::train::{
    evaluate, patch_camera, psnr, stage1_fit, stage2_edit, DenoiserConfig, DenoiserKind, EditMode, RunConfig,
    TrainError,
};
use crate::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(#[from] GeometryError),
    #[error("remote denoiser unreachable: {0}")]
    Remote(String),
    #[error("checkpoint not found: {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("invalid checkpoint {}: {msg}", path.display())]
    InvalidCheckpoint { path: PathBuf, msg: String },
    #[error("training: {0}")]
    Train(TrainError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Dataset(_) => 2,
            CliError::Remote(_) => 3,
            CliError::MissingCheckpoint(_) => 4,
            CliError::InvalidCheckpoint { .. } => 5,
            CliError::Train(TrainError::Config(_) | TrainError::EmptyPool) => 2,
            CliError::Train(_) | CliError::Io { .. } | CliError::Image(_) => 1,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diffusion(DiffusionError::Transport(m)) => CliError::Remote(m),
            e => CliError::Train(e),
        }
    }
}

fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Debug, Parser)]
#[command(name = "neused", version, about = "Reconstruct and edit neural implicit surfaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a self-rendered dataset of an analytic sphere plus a matching config.
    Synth(SynthArgs),
    /// Stage 1: fit the source scene and background to a dataset.
    Reconstruct(ReconstructArgs),
    /// Stage 2: edit a stage-1 checkpoint with a denoiser.
    Edit(EditArgs),
    /// Render every layer along a camera path.
    Render(RenderArgs),
    /// Extract a coloured mesh from the source or target SDF.
    Mesh(MeshArgs),
    /// Compute proxy metrics along a camera path.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub views: usize,
    /// Extra views appended after the training views and listed as holdout.
    #[arg(long, default_value_t = 1)]
    pub holdout: usize,
    #[arg(long, default_value_t = 64)]
    pub res: usize,
    #[arg(long, default_value_t = 0.6)]
    pub fov: f64,
    #[arg(long, default_value_t = 0.5)]
    pub radius: f64,
    #[arg(long, default_value = "blender_transforms")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Stage-1 checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub source_prompt: Option<String>,
    #[arg(long)]
    pub guidance: Option<f64>,
    /// `analytic` or `remote:<URL>`.
    #[arg(long)]
    pub denoiser: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Foreground,
    Background,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Render settings are read from this config when given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `spherical` or a JSON file of cameras.
    #[arg(long, default_value = "spherical")]
    pub path: String,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub path: PathArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub path: PathArgs,
    /// Report file; the report is also printed to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Source,
    Target,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output file; `.obj` or `.ply`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Which::Target)]
    pub which: Which,
    #[arg(long, default_value_t = 128)]
    pub res: usize,
}

/// A camera as stored in checkpoints and path files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub intrinsics: Intrinsics,
    /// Row-major camera-to-world matrix.
    pub pose: [[f64; 4]; 4],
}

impl CameraRecord {
    pub fn from_camera(c: &Camera) -> Self {
        let p = c.pose();
        Self {
            intrinsics: c.intrinsics,
            pose: std::array::from_fn(|r| std::array::from_fn(|k| p[(r, k)])),
        }
    }

    pub fn to_camera(&self) -> Result<Camera, CliError> {
        let m = Matrix4::from_fn(|r, k| self.pose[r][k]);
        Camera::new(self.intrinsics, &m).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Metadata stored in every checkpoint header.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub config_sha256: String,
    pub cameras: Vec<CameraRecord>,
}

/// Caps rayon's worker count from `NEUSED_THREADS`.
pub fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("NEUSED_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("NEUSED_THREADS must be a positive integer, got {v:?}")))?;
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Reconstruct(a) => cmd_reconstruct(&a),
        Command::Edit(a) => cmd_edit(&a),
        Command::Render(a) => cmd_render(&a),
        Command::Mesh(a) => cmd_mesh(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

fn read_config(path: &Path) -> Result<(RunConfig, Vec<u8>), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let cfg = RunConfig::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((cfg, bytes))
}

/// Relative dataset paths are taken relative to the config file.
fn dataset_dir(cfg: &RunConfig, config_path: &Path) -> PathBuf {
    if cfg.dataset.path.is_absolute() {
        cfg.dataset.path.clone()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(&cfg.dataset.path)
    }
}

fn read_checkpoint(path: &Path) -> Result<(FieldBundle, CheckpointHeader, CheckpointMeta), CliError> {
    if !path.exists() {
        return Err(CliError::MissingCheckpoint(path.to_path_buf()));
    }
    let invalid = |msg: String| CliError::InvalidCheckpoint {
        path: path.to_path_buf(),
        msg,
    };
    let (bundle, header) = load_checkpoint(path).map_err(|e| match e {
        CheckpointError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => {
            CliError::MissingCheckpoint(path.to_path_buf())
        }
        e => invalid(e.to_string()),
    })?;
    let meta: CheckpointMeta = if header.meta.is_null() {
        CheckpointMeta::default()
    } else {
        serde_json::from_value(header.meta.clone()).map_err(|e| invalid(format!("meta: {e}")))?
    };
    Ok((bundle, header, meta))
}

fn write_checkpoint(path: &Path, bundle: &FieldBundle, stage: &str, meta: &CheckpointMeta) -> Result<(), CliError> {
    let value = serde_json::to_value(meta).expect("meta serializes");
    save_checkpoint(path, bundle, stage, value).map_err(|e| match e {
        CheckpointError::Io(e) => CliError::Io {
            context: format!("writing {}", path.display()),
            source: e,
        },
        e => CliError::Config(e.to_string()),
    })
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

pub fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    if a.views == 0 || a.res == 0 {
        return Err(CliError::Config("--views and --res must be positive".into()));
    }
    if !(a.radius > 0.0 && a.radius < 1.0) {
        return Err(CliError::Config("--radius must lie in (0, 1)".into()));
    }
    let format = a.format.parse().map_err(CliError::Config)?;
    let fg = AnalyticForeground {
        scene: AnalyticScene::sphere(a.radius),
        rgb: [0.9, 0.5, 0.2],
        sharpness: 200.0,
    };
    let bg = SkyBackground::constant(2.0, [0.1, 0.2, 0.3]);
    let k = Intrinsics::from_fov(a.res, a.res, a.fov);
    let cams = orbit_cameras(a.views + a.holdout, 3.0, k);
    let ds = synthetic_dataset(&fg, &bg, cams, &RenderSettings::default())?;
    let data = a.out.join("data");
    write_dataset(&ds, &data, format)?;
    let mut cfg = RunConfig::default();
    cfg.dataset.path = PathBuf::from("data");
    cfg.dataset.format = a.format.clone();
    cfg.dataset.holdout = (a.views..a.views + a.holdout).collect();
    cfg.model = crate::fields::ModelConfig::tiny();
    cfg.render.fg_samples = 32;
    cfg.render.bg_samples = 16;
    cfg.edit.prompt = Some("a red sphere".into());
    let cfg_path = a.out.join("config.toml");
    write_atomic(&cfg_path, cfg.to_toml().as_bytes()).map_err(io(format!("writing {}", cfg_path.display())))?;
    println!("{}", cfg_path.display());
    Ok(())
}

pub fn cmd_reconstruct(a: &ReconstructArgs) -> Result<(), CliError> {
    let (mut cfg, bytes) = read_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.iterations {
        cfg.stage1.iterations = n;
    }
    let fmt = cfg.dataset.format()?;
    let ds = load_dataset(&dataset_dir(&cfg, &a.config), fmt)?;
    if let Some(&h) = cfg.dataset.holdout.iter().find(|&&h| h >= ds.len()) {
        return Err(CliError::Config(format!("holdout view {h} outside a dataset of {}", ds.len())));
    }
    let views: Vec<usize> = (0..ds.len()).filter(|v| !cfg.dataset.holdout.contains(v)).collect();

    let manifest_path = a.out.join("manifest.json");
    let (mut manifest, started) = RunManifest::start("reconstruct", "source", &bytes, cfg.seed);
    manifest.write(&manifest_path).map_err(io("writing manifest"))?;

    let mut bundle = FieldBundle::new(cfg.model.clone(), cfg.seed);
    let report = stage1_fit(&mut bundle, &ds, &views, &cfg.stage1, &cfg.render, cfg.seed)?;

    let meta = CheckpointMeta {
        seed: cfg.seed,
        config_sha256: manifest.config_sha256.clone(),
        cameras: ds.cameras.iter().map(CameraRecord::from_camera).collect(),
    };
    let ckpt = a.out.join("source.ckpt");
    write_checkpoint(&ckpt, &bundle, "source", &meta)?;

    // Contact sheet: ground truth above, reconstruction below.
    let shown: Vec<usize> = cfg.dataset.holdout.iter().chain(&views).copied().take(4).collect();
    let mut tiles = Vec::new();
    let mut holdout_psnr = Vec::new();
    for &v in &shown {
        let img = render_image(&bundle.source, &bundle.background, &ds.cameras[v], &cfg.render, false);
        let rec = to_rgb(&img, |p| p.rgb);
        if cfg.dataset.holdout.contains(&v) {
            let a: Vec<f64> = rec.pixels.iter().flatten().copied().collect();
            let b: Vec<f64> = ds.images[v].pixels.iter().flatten().copied().collect();
            holdout_psnr.push(psnr(&a, &b));
        }
        tiles.push((ds.images[v].clone(), rec));
    }
    let sheet = a.out.join("contact_sheet.png");
    write_png(&contact_sheet(&tiles), &sheet)?;
    let summary = serde_json::json!({
        "iterations": cfg.stage1.iterations,
        "final_photometric": report.photometric.last(),
        "final_eikonal": report.eikonal.last(),
        "holdout_views": cfg.dataset.holdout,
        "holdout_psnr": holdout_psnr.iter().map(|p| if p.is_finite() { serde_json::json!(p) } else { serde_json::json!("inf") }).collect::<Vec<_>>(),
    });
    let summary_path = a.out.join("stage1.json");
    write_atomic(&summary_path, &serde_json::to_vec_pretty(&summary).expect("summary serializes"))
        .map_err(io("writing stage1.json"))?;

    manifest.finish(started, vec![display(&ckpt), display(&sheet), display(&summary_path)]);
    manifest.write(&manifest_path).map_err(io("writing manifest"))?;
    Ok(())
}

fn to_rgb(img: &RenderedImage, layer: impl Fn(&crate::render::RenderOutput) -> [f64; 3]) -> RgbImage {
    RgbImage {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|p| layer(p).map(|v| v.clamp(0.0, 1.0))).collect(),
    }
}

fn contact_sheet(tiles: &[(RgbImage, RgbImage)]) -> RgbImage {
    let w: usize = tiles.iter().map(|t| t.0.width).sum::<usize>().max(1);
    let h = tiles.iter().map(|t| t.0.height).max().unwrap_or(1);
    let mut sheet = RgbImage::new(w, 2 * h);
    let mut x0 = 0;
    for (gt, rec) in tiles {
        for (row, img) in [gt, rec].into_iter().enumerate() {
            for y in 0..img.height.min(h) {
                for x in 0..img.width {
                    sheet.pixels[(row * h + y) * w + x0 + x] = img.get(x.min(img.width - 1), y);
                }
            }
        }
        x0 += gt.width;
    }
    sheet
}

/// Builds the configured denoiser for images of `shape` (`[3, H, W]`).
pub fn build_denoiser(cfg: &DenoiserConfig, shape: &[usize]) -> Result<Box<dyn Denoiser>, CliError> {
    let schedule = cfg.schedule.build()?;
    match cfg.kind {
        DenoiserKind::Analytic => {
            let flat = |rgb: [f64; 3]| -> Tensor {
                let n = shape[1] * shape[2];
                Tensor::new(shape.to_vec(), (0..3 * n).map(|i| rgb[i / n]).collect()).expect("image shape")
            };
            let prior = |rgb| GaussianPrior::new(flat(rgb), cfg.variance).map_err(|e| CliError::Config(e.to_string()));
            Ok(Box::new(AnalyticDenoiser::new(
                prior(cfg.mean_rgb)?,
                prior(cfg.uncond_rgb)?,
                &schedule,
            )))
        }
        DenoiserKind::Remote => {
            let url = cfg
                .endpoint
                .as_deref()
                .ok_or_else(|| CliError::Config("remote denoiser needs an endpoint".into()))?;
            Ok(Box::new(RemoteDenoiser::new(url, cfg.retries)))
        }
    }
}

pub fn cmd_edit(a: &EditArgs) -> Result<(), CliError> {
    let (mut cfg, bytes) = read_config(&a.config)?;
    if let Some(p) = &a.prompt {
        cfg.edit.prompt = Some(p.clone());
    }
    if let Some(p) = &a.source_prompt {
        cfg.edit.source_prompt = Some(p.clone());
    }
    if let Some(g) = a.guidance {
        cfg.edit.guidance_scale = g;
    }
    if let Some(n) = a.iterations {
        cfg.edit.iterations = n;
    }
    if let Some(m) = a.mode {
        cfg.edit.mode = match m {
            ModeArg::Foreground => EditMode::Foreground,
            ModeArg::Background => EditMode::Background,
        };
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    match a.denoiser.as_deref() {
        None => {}
        Some("analytic") => cfg.denoiser.kind = DenoiserKind::Analytic,
        Some(d) => match d.strip_prefix("remote:") {
            Some(url) if !url.is_empty() => {
                cfg.denoiser.kind = DenoiserKind::Remote;
                cfg.denoiser.endpoint = Some(url.to_string());
            }
            _ => return Err(CliError::Config(format!("--denoiser must be analytic or remote:<URL>, got {d:?}"))),
        },
    }
    cfg.validate()?;
    if cfg.edit.prompt.is_none() {
        return Err(CliError::Config("an edit prompt is required (--prompt or edit.prompt)".into()));
    }

    let (mut bundle, header, meta) = read_checkpoint(&a.checkpoint)?;
    if header.stage != "source" {
        return Err(CliError::InvalidCheckpoint {
            path: a.checkpoint.clone(),
            msg: format!("expected a stage-1 (\"source\") checkpoint, found stage {:?}", header.stage),
        });
    }
    let cameras: Vec<Camera> = meta.cameras.iter().map(|c| c.to_camera()).collect::<Result<_, _>>()?;
    if cameras.is_empty() {
        return Err(CliError::InvalidCheckpoint {
            path: a.checkpoint.clone(),
            msg: "no cameras recorded".into(),
        });
    }
    let patched: Vec<Camera> = cameras.iter().map(|c| patch_camera(c, cfg.edit.patch)).collect();
    let shape = [3, patched[0].height(), patched[0].width()];
    if patched.iter().any(|c| [3, c.height(), c.width()] != shape) {
        return Err(CliError::Config("all cameras must share one resolution".into()));
    }
    let schedule = cfg.denoiser.schedule.build()?;
    let denoiser = build_denoiser(&cfg.denoiser, &shape)?;

    let manifest_path = a.out.join("manifest.json");
    let (mut manifest, started) = RunManifest::start("edit", "edited", &bytes, cfg.seed);
    manifest.write(&manifest_path).map_err(io("writing manifest"))?;

    let log_path = a.out.join("edit_log.jsonl");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path).map_err(io("creating loss log"))?);
    let mut log_err = None;
    let result = stage2_edit(
        &mut bundle,
        &cfg.edit,
        denoiser.as_ref(),
        &schedule,
        &cameras,
        &cfg.render,
        cfg.seed,
        |entry| {
            let line = serde_json::to_string(entry).expect("log line serializes");
            if let Err(e) = writeln!(log, "{line}") {
                log_err.get_or_insert(e);
            }
        },
    );
    log.flush().map_err(io("writing loss log"))?;
    if let Some(e) = log_err {
        return Err(io("writing loss log")(e));
    }
    result?;

    let meta = CheckpointMeta {
        config_sha256: manifest.config_sha256.clone(),
        seed: cfg.seed,
        ..meta
    };
    let ckpt = a.out.join("edited.ckpt");
    write_checkpoint(&ckpt, &bundle, "edited", &meta)?;
    manifest.finish(started, vec![display(&ckpt), display(&log_path)]);
    manifest.write(&manifest_path).map_err(io("writing manifest"))?;
    Ok(())
}

fn render_settings(config: Option<&Path>) -> Result<(RenderSettings, Vec<u8>), CliError> {
    match config {
        Some(p) => {
            let (cfg, bytes) = read_config(p)?;
            Ok((cfg.render, bytes))
        }
        None => Ok((RenderSettings::default(), Vec::new())),
    }
}

fn camera_path(a: &PathArgs, meta: &CheckpointMeta) -> Result<CameraPath, CliError> {
    if a.frames == 0 {
        return Err(CliError::Config("--frames must be at least 1".into()));
    }
    if a.path == "spherical" {
        let first = meta
            .cameras
            .first()
            .ok_or_else(|| CliError::Config("checkpoint has no cameras for a spherical path".into()))?;
        let positions: Vec<[f64; 3]> = meta.cameras.iter().map(|c| [c.pose[0][3], c.pose[1][3], c.pose[2][3]]).collect();
        return spherical_poses(&positions, a.frames, first.intrinsics).map_err(|e| CliError::Config(e.to_string()));
    }
    let text = std::fs::read_to_string(&a.path).map_err(|e| CliError::Config(format!("{}: {e}", a.path)))?;
    let records: Vec<CameraRecord> =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", a.path)))?;
    let cameras: Vec<Camera> = records.iter().map(|r| r.to_camera()).collect::<Result<_, _>>()?;
    let intrinsics = cameras
        .first()
        .ok_or_else(|| CliError::Config(format!("{}: no cameras", a.path)))?
        .intrinsics;
    Ok(CameraPath { intrinsics, cameras })
}

/// Layer names written by `render`, in file order.
pub const LAYERS: [&str; 6] = ["source", "target", "background", "mask", "normal", "phong"];

pub fn cmd_render(a: &RenderArgs) -> Result<(), CliError> {
    let (settings, bytes) = render_settings(a.path.config.as_deref())?;
    let (bundle, _, meta) = read_checkpoint(&a.path.checkpoint)?;
    let path = camera_path(&a.path, &meta)?;
    let manifest_path = a.out.join("manifest.json");
    let (mut manifest, started) = RunManifest::start("render", "render", &bytes, meta.seed);
    manifest.write(&manifest_path).map_err(io("writing manifest"))?;
    let tv = bundle.target_view();
    let mut outputs = Vec::new();
    for (k, cam) in path.cameras.iter().enumerate() {
        let src = render_image(&bundle.source, &bundle.background, cam, &settings, false);
        let tgt = render_image(&tv, &bundle.background, cam, &settings, true);
        let layers = [
            to_rgb(&src, |p| p.rgb),
            to_rgb(&tgt, |p| p.rgb),
            to_rgb(&tgt, |p| p.rgb_bg),
            to_rgb(&tgt, |p| [p.mask; 3]),
            to_rgb(&tgt, |p| p.normal.map(|v| 0.5 * (v + 1.0))),
            to_rgb(&tgt, |p| p.phong),
        ];
        for (name, img) in LAYERS.iter().zip(&layers) {
            let file = a.out.join(format!("frame_{k:03}_{name}.png"));
            write_png(img, &file)?;
            outputs.push(display(&file));
        }
    }
    manifest.finish(started, outputs);
    manifest.write(&manifest_path).map_err(io("writing manifest"))?;
    Ok(())
}

pub fn cmd_mesh(a: &MeshArgs) -> Result<(), CliError> {
    let format = MeshFormat::from_path(&a.out)
        .ok_or_else(|| CliError::Config(format!("{}: mesh output must end in .obj or .ply", a.out.display())))?;
    if a.res < 8 {
        return Err(CliError::Config(format!("--res must be at least 8, got {}", a.res)));
    }
    let (bundle, _, _) = read_checkpoint(&a.checkpoint)?;
    let mesh = match a.which {
        Which::Source => colored_mesh(&bundle.source, a.res)?,
        Which::Target => colored_mesh(&bundle.target_view().with_normals(NormalMode::Analytic), a.res)?,
    };
    export_mesh(&mesh, &a.out, format)?;
    Ok(())
}

/// Marching cubes on `[-1, 1]³`; vertices are coloured by the field's colour
/// network looking straight at the surface (`d = −n`).
pub fn colored_mesh<F: Foreground>(field: &F, res: usize) -> Result<crate::geometry::TriangleMesh, CliError> {
    let mut mesh = marching_cubes(|x| field.sdf(x), [-1.0; 3], [1.0; 3], res)?;
    mesh.compute_normals();
    mesh.colors = mesh
        .vertices
        .iter()
        .map(|v| {
            let g = sdf_gradient(field, v, NormalMode::Analytic).expect("analytic gradients need no step");
            let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt().max(1e-12);
            let d = g.map(|c| -c / n);
            field.sample(v, &d, EvalMode::Full).0.rgb
        })
        .collect();
    Ok(mesh)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let (settings, _) = render_settings(a.path.config.as_deref())?;
    let (bundle, _, meta) = read_checkpoint(&a.path.checkpoint)?;
    let path = camera_path(&a.path, &meta)?;
    let report = evaluate(&bundle, &path, &settings);
    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    if let Some(out) = &a.out {
        write_atomic(out, &json).map_err(io(format!("writing {}", out.display())))?;
    }
    std::io::stdout().write_all(&json).map_err(io("writing stdout"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Remote("x".into()).exit_code(), 3);
        assert_eq!(CliError::MissingCheckpoint("a".into()).exit_code(), 4);
        let bad = CliError::InvalidCheckpoint {
            path: "a".into(),
            msg: "m".into(),
        };
        assert_eq!(bad.exit_code(), 5);
        let e: CliError = TrainError::Diffusion(DiffusionError::Transport("refused".into())).into();
        assert_eq!(e.exit_code(), 3);
        assert_eq!(CliError::from(TrainError::Config("c".into())).exit_code(), 2);
    }

    #[test]
    fn camera_records_round_trip() {
        let c = Camera::look_at(Intrinsics::from_fov(8, 6, 0.7), [1.0, -2.0, 0.5], [0.0; 3], [0.0, 0.0, 1.0]);
        let back = CameraRecord::from_camera(&c).to_camera().unwrap();
        assert!((back.rotation - c.rotation).norm() < 1e-12);
        assert!((back.position - c.position).norm() < 1e-12);
    }

    #[test]
    fn flat_analytic_denoiser_has_the_requested_shape() {
        let d = build_denoiser(&DenoiserConfig::default(), &[3, 4, 5]).unwrap();
        let x = Tensor::zeros(&[3, 4, 5]);
        let eps = d.predict_noise(&x, 10, &crate::diffusion::Conditioning::from_prompt("p", 16)).unwrap();
        assert_eq!(eps.shape(), &[3, 4, 5]);
    }
}
