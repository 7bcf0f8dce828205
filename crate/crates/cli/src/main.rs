mod config;
mod serve;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use gigazoom::fixture::{Capture, CaptureSpec};
use gigazoom::metrics::PatchSampleSpec;
use gigazoom::pyramid::{build_pyramid_from_image, PyramidParams, TileFormat};
use gigazoom::tracker::{GridParams, TrackParams};
use gigazoom::Image;
use log::error;
use serde_json::json;
use thiserror::Error;

use config::{EnhancerKind, PipelineConfig};
use stages::{PatchSource, PositionsFile};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {error:#}")]
    Stage { stage: &'static str, error: anyhow::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 3,
        }
    }
}

fn stage(stage: &'static str) -> impl FnOnce(anyhow::Error) -> CliError {
    move |error| CliError::Stage { stage, error }
}

#[derive(Parser, Debug)]
#[command(name = "gigazoom", version, about = "Exemplar-guided gigapixel upscaling pipeline")]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "UZ_THREADS")]
    threads: Option<usize>,
    /// Single-threaded reference mode.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register close-ups into the full image through the bridging videos.
    Register,
    /// Cut degradation-aligned HR/LR patch pairs.
    BuildDataset(DatasetArgs),
    /// Build the exemplar bank from the dataset and report its size.
    EnhanceBank,
    /// Run the whole pipeline.
    Zoom(ZoomArgs),
    /// Build a Deep Zoom pyramid from a canvas or an image.
    Pyramid(PyramidArgs),
    /// LR-MAE and patch distribution distances for one output.
    Metrics(MetricsArgs),
    /// Render a synthetic capture with known ground truth.
    MakeFixture(FixtureArgs),
    /// Serve a directory over HTTP (GET only) for the viewer.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct DatasetArgs {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ZoomArgs {
    #[arg(long)]
    zoom: Option<f64>,
    #[arg(long, value_parser = ["bicubic", "exemplar", "external"])]
    enhancer: Option<String>,
    #[arg(long)]
    steps: Option<u32>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride_min: Option<usize>,
    #[arg(long)]
    stride_max: Option<usize>,
    #[arg(long)]
    band_height: Option<usize>,
    /// Also render a bicubic pyramid for A/B comparison.
    #[arg(long)]
    baseline: bool,
    #[command(flatten)]
    dataset: DatasetArgs,
}

#[derive(Args, Debug)]
struct PyramidArgs {
    /// Band canvas directory written by the mosaic.
    #[arg(long, conflicts_with = "image", required_unless_present = "image")]
    canvas: Option<PathBuf>,
    /// PNG or JPEG image.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "pyramid")]
    name: String,
    #[arg(long)]
    tile_size: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
    #[arg(long, value_parser = ["png", "jpeg"])]
    format: Option<String>,
    #[arg(long)]
    jpeg_quality: Option<u8>,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Low-resolution input image.
    #[arg(long)]
    input: PathBuf,
    /// Output image (PNG) or band canvas directory.
    #[arg(long)]
    output_image: PathBuf,
    #[arg(long)]
    zoom: f64,
    /// Reference (close-up) images for the distribution distances.
    #[arg(long)]
    reference: Vec<PathBuf>,
    #[arg(long, default_value_t = 64)]
    patch_size: usize,
    #[arg(long, default_value_t = 500)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Positions file to reuse (read if present, written otherwise).
    #[arg(long)]
    positions: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Close-up scales relative to the full view, in capture order.
    #[arg(long, value_delimiter = ',', default_value = "0.125")]
    scales: Vec<f64>,
    #[arg(long, default_value_t = 384)]
    full_size: usize,
    #[arg(long, default_value_t = 384)]
    closeup_size: usize,
    #[arg(long, default_value_t = 256)]
    frame_size: usize,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value = ".")]
    root: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Stop after this many requests.
    #[arg(long, hide = true)]
    max_requests: Option<usize>,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(o) = &cli.output {
        cfg.output = o.clone();
    }
    Ok(cfg)
}

fn apply_dataset_args(cfg: &mut PipelineConfig, a: &DatasetArgs) {
    if let Some(v) = a.count {
        cfg.dataset.count = v;
    }
    if let Some(v) = a.patch_size {
        cfg.dataset.patch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.dataset.seed = v;
    }
}

fn apply_zoom_args(cfg: &mut PipelineConfig, a: &ZoomArgs) {
    apply_dataset_args(cfg, &a.dataset);
    if a.zoom.is_some() {
        cfg.zoom = a.zoom;
    }
    if let Some(k) = &a.enhancer {
        cfg.enhancer.kind = match k.as_str() {
            "bicubic" => EnhancerKind::Bicubic,
            "exemplar" => EnhancerKind::Exemplar,
            _ => EnhancerKind::External,
        };
    }
    let m = &mut cfg.mosaic;
    if let Some(v) = a.steps {
        m.steps = v;
    }
    if let Some(v) = a.window {
        m.window = v;
    }
    if let Some(v) = a.stride_min {
        m.stride_min = v;
    }
    if let Some(v) = a.stride_max {
        m.stride_max = v;
    }
    if let Some(v) = a.band_height {
        m.band_height = v;
    }
    cfg.baseline |= a.baseline;
}

fn prepare_output(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Config(format!("cannot create output {}: {e}", out.display())))?;
    let marker = out.join("FAILED");
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

/// Runs a staged command, leaving a FAILED marker in `out` on stage errors.
fn staged(out: &Path, f: impl FnOnce() -> Result<(), CliError>) -> Result<(), CliError> {
    prepare_output(out)?;
    let r = f();
    if let Err(e @ CliError::Stage { .. }) = &r {
        let _ = std::fs::write(out.join("FAILED"), format!("{e}\n"));
    }
    r
}

fn run(cli: Cli, threads: usize) -> Result<(), CliError> {
    match &cli.command {
        Command::Register => {
            let cfg = load_config(&cli)?;
            cfg.validate()?;
            let cap = cfg.resolve_capture()?;
            staged(&cfg.output, || {
                let reg = stages::register(&cfg, &cap, &cfg.output).map_err(stage("register"))?;
                let rows: Vec<_> = reg
                    .closeups
                    .iter()
                    .map(|c| json!({"closeup": c.path, "scale": c.scale, "zoom": c.zoom}))
                    .collect();
                print_json(&rows);
                Ok(())
            })
        }
        Command::BuildDataset(a) => {
            let mut cfg = load_config(&cli)?;
            apply_dataset_args(&mut cfg, a);
            cfg.validate()?;
            staged(&cfg.output, || {
                let (m, report) = stages::dataset(&cfg, &cfg.output).map_err(stage("build-dataset"))?;
                print_json(&json!({
                    "pairs": m.pairs.len(),
                    "mean_deviation": report.mean_deviation,
                    "max_deviation": report.max_deviation,
                    "flagged": report.flagged,
                }));
                Ok(())
            })
        }
        Command::EnhanceBank => {
            let cfg = load_config(&cli)?;
            cfg.validate()?;
            staged(&cfg.output, || {
                let (_, summary) = stages::exemplar_bank(&cfg, &cfg.output).map_err(stage("enhance-bank"))?;
                stages::write_json(&cfg.output.join("bank.json"), &summary).map_err(stage("enhance-bank"))?;
                print_json(&summary);
                Ok(())
            })
        }
        Command::Zoom(a) => {
            let mut cfg = load_config(&cli)?;
            apply_zoom_args(&mut cfg, a);
            cfg.validate()?;
            let cap = cfg.resolve_capture()?;
            staged(&cfg.output, || {
                let m = stages::zoom(&cfg, &cap, &cfg.output, threads, cli.deterministic)?;
                print_json(&json!({
                    "zoom": m.zoom,
                    "canvas": m.canvas,
                    "windows": m.windows,
                    "enhancer": m.enhancer,
                    "metrics": m.metrics,
                    "outputs": m.outputs,
                }));
                Ok(())
            })
        }
        Command::Pyramid(a) => pyramid_cmd(&cli, a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::MakeFixture(a) => fixture_cmd(a),
        Command::Serve(a) => serve::serve(&a.root, &format!("{}:{}", a.host, a.port), a.max_requests)
            .map_err(|e| CliError::Config(format!("{e:#}"))),
    }
}

fn pyramid_cmd(cli: &Cli, a: &PyramidArgs) -> Result<(), CliError> {
    let mut p = match &cli.config {
        Some(_) => load_config(cli)?.pyramid,
        None => PyramidParams::default(),
    };
    if let Some(v) = a.tile_size {
        p.tile_size = v;
    }
    if let Some(v) = a.overlap {
        p.overlap = v;
    }
    if let Some(f) = &a.format {
        p.format = if f == "png" { TileFormat::Png } else { TileFormat::Jpeg };
    }
    if let Some(q) = a.jpeg_quality {
        p.jpeg_quality = q;
    }
    if p.tile_size == 0 || p.overlap >= p.tile_size {
        return Err(CliError::Config(format!("tile size {} / overlap {}", p.tile_size, p.overlap)));
    }
    let b = match (&a.canvas, &a.image) {
        (Some(c), _) => stages::pyramid(c, &a.out, &a.name, &p).map_err(stage("pyramid"))?,
        (None, Some(i)) => {
            let img = Image::load_rgb(i).map_err(|e| CliError::Config(format!("{}: {e}", i.display())))?;
            build_pyramid_from_image(&img, &a.out, &a.name, &p).map_err(|e| stage("pyramid")(e.into()))?
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let d = b.pyramid.descriptor;
    print_json(&json!({
        "dzi": b.pyramid.dzi_path(),
        "width": d.width,
        "height": d.height,
        "max_level": d.max_level(),
        "tiles": b.tiles,
    }));
    Ok(())
}

fn metrics_cmd(a: &MetricsArgs) -> Result<(), CliError> {
    let load = |p: &Path| Image::load_rgb(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())));
    let input = load(&a.input)?;
    let references = a.reference.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
    let mut spec = PatchSampleSpec {
        patch_size: a.patch_size,
        count: a.count,
        seed: a.seed,
        positions: Vec::new(),
    };
    if let Some(p) = a.positions.as_ref().filter(|p| p.exists()) {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(e.to_string()))?;
        let f: PositionsFile =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        spec.patch_size = f.patch_size;
        spec.count = f.positions.len();
        spec.positions = f.positions;
    }
    let go = || -> anyhow::Result<serde_json::Value> {
        let (mut report, positions) = if a.output_image.is_dir() {
            let bands = gigazoom::mosaic::CanvasBands::open(&a.output_image)?;
            stages::evaluate(&input, PatchSource::Bands(&bands), a.zoom, &references, &spec)?
        } else {
            let img = Image::load_rgb(&a.output_image).with_context(|| a.output_image.display().to_string())?;
            stages::evaluate(&input, PatchSource::Image(&img), a.zoom, &references, &spec)?
        };
        if let Some(p) = &a.positions {
            if !p.exists() {
                stages::write_json(p, &positions)?;
            }
            report.positions_file = Some(p.clone());
        }
        if let Some(r) = &a.report {
            stages::write_json(r, &report)?;
        }
        Ok(serde_json::to_value(&report)?)
    };
    print_json(&go().map_err(stage("metrics"))?);
    Ok(())
}

fn fixture_cmd(a: &FixtureArgs) -> Result<(), CliError> {
    if a.scales.iter().any(|&s| !(s > 0.0 && s < 1.0)) {
        return Err(CliError::Config(format!("scales must lie in (0, 1): {:?}", a.scales)));
    }
    let spec = CaptureSpec {
        seed: a.seed,
        full_size: (a.full_size, a.full_size),
        closeup_size: (a.closeup_size, a.closeup_size),
        frame_size: (a.frame_size, a.frame_size),
        scales: a.scales.clone(),
        ..CaptureSpec::default()
    };
    let go = || -> anyhow::Result<()> {
        let cap = Capture::generate(&spec);
        cap.write(&a.out)?;
        let mut cfg = PipelineConfig::default();
        cfg.capture.dir = Some(PathBuf::from("."));
        cfg.output = PathBuf::from("out");
        cfg.registration.grid = GridParams {
            rows: 12,
            cols: 12,
            margin: 0.1,
        };
        cfg.registration.track = TrackParams {
            patch_radius: 7,
            search_radius: 12,
            ..TrackParams::default()
        };
        cfg.mosaic.window = 256;
        cfg.mosaic.stride_min = 128;
        cfg.mosaic.stride_max = 192;
        cfg.mosaic.margin = 32;
        cfg.mosaic.band_height = 256;
        stages::write_json(&a.out.join("config.json"), &cfg)?;
        stages::write_json(&a.out.join("fixture.json"), &spec)?;
        Ok(())
    };
    go().map_err(stage("make-fixture"))?;
    print_json(&json!({"fixture": a.out, "config": a.out.join("config.json")}));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let threads = if cli.deterministic {
        1
    } else {
        cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    };
    if threads == 0 {
        eprintln!("config error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("config error: thread pool: {e}");
        return ExitCode::from(2);
    }
    match run(cli, threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
