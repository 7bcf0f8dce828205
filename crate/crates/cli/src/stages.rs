use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gigazoom::dataset::{build_dataset, verify_alignment, AlignmentReport, CaptureSet, DatasetManifest};
use gigazoom::degrade::scaled_len;
use gigazoom::enhance::{
    BicubicEnhancer, Enhancer, ExemplarBank, ExemplarEnhancer, ExternalEnhancer, IterativeProxy, Mode,
};
use gigazoom::geometry::{map_footprint, Footprint, Point, Similarity};
use gigazoom::metrics::{
    distribution_distances, image_patch_features, lr_mae, patch_features, sample_patch_positions, MetricsReport,
    PatchSampleSpec,
};
use gigazoom::mosaic::{run_iterative, run_oneshot, CanvasBands, MosaicParams, MosaicRun};
use gigazoom::pyramid::{build_pyramid, PyramidBuild, PyramidParams};
use gigazoom::tracker::{
    closeup_to_full, list_frames, load_frames, register_tracks, register_video, RegistrationParams, TrackResult,
    VideoRegistration,
};
use gigazoom::Image;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EnhancerKind, PipelineConfig, ResolvedCapture};

pub const REGISTRATION_FILE: &str = "registration.json";
pub const OVERLAY_FILE: &str = "registration_overlay.png";
pub const DATASET_DIR: &str = "dataset";
pub const CANVAS_DIR: &str = "canvas";
pub const BASELINE_CANVAS_DIR: &str = "baseline_canvas";
pub const PYRAMID_DIR: &str = "pyramid";
/// Canvases above this many pixels skip LR-MAE, which needs the whole image.
const LR_MAE_MAX_PIXELS: usize = 1 << 27;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CloseupRegistration {
    pub path: PathBuf,
    pub size: (usize, usize),
    /// Close-up pixels to full-image pixels.
    pub transform: Similarity,
    pub scale: f64,
    pub zoom: f64,
    pub footprint: Footprint,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegistrationFile {
    pub full: PathBuf,
    pub full_size: (usize, usize),
    pub videos: Vec<VideoRegistration>,
    pub closeups: Vec<CloseupRegistration>,
}

impl RegistrationFile {
    pub fn load(out: &Path) -> Result<RegistrationFile> {
        let path = out.join(REGISTRATION_FILE);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("{} missing; run `register` first", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// 1/s of the most zoomed-in close-up.
    pub fn max_zoom(&self) -> f64 {
        self.closeups.iter().map(|c| c.zoom).fold(1.0, f64::max)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn register_one(path: &Path, track: Option<&Path>, params: &RegistrationParams, i: usize) -> Result<VideoRegistration> {
    let reg = match track {
        Some(t) => {
            info!("video {i}: track file {} supplied; built-in tracker skipped", t.display());
            let tracks = TrackResult::load(t).with_context(|| format!("track file {}", t.display()))?;
            let first = list_frames(path)?.into_iter().next().expect("list_frames is non-empty");
            let size = Image::load_luma(&first)?.dims();
            register_tracks(&tracks, size, params, i)?
        }
        None => register_video(&load_frames(path)?, params, i)?,
    };
    info!(
        "video {i}: {} segments, scale {:.5}",
        reg.segments.len(),
        reg.transform.scale()
    );
    Ok(reg)
}

/// Registers every close-up into the full image and draws their footprints.
pub fn register(cfg: &PipelineConfig, cap: &ResolvedCapture, out: &Path) -> Result<RegistrationFile> {
    let full = Image::load_rgb(&cap.full).with_context(|| cap.full.display().to_string())?;
    let videos = cap
        .videos
        .iter()
        .zip(&cap.tracks)
        .enumerate()
        .map(|(i, (v, t))| register_one(v, t.as_deref(), &cfg.registration, i).with_context(|| format!("video {i}")))
        .collect::<Result<Vec<_>>>()?;
    let mut closeups = Vec::new();
    for (i, p) in cap.closeups.iter().enumerate() {
        let size = image_dims(p)?;
        // Video i leads from close-up i towards the full view.
        let transform = closeup_to_full(size.0, &videos[i..], full.width())?;
        let scale = transform.scale();
        info!("close-up {i}: scale {scale:.5} (zoom {:.3})", 1.0 / scale);
        closeups.push(CloseupRegistration {
            path: p.clone(),
            size,
            transform,
            scale,
            zoom: 1.0 / scale,
            footprint: map_footprint(&transform, size.0 as f64, size.1 as f64),
        });
    }
    let reg = RegistrationFile {
        full: cap.full.clone(),
        full_size: full.dims(),
        videos,
        closeups,
    };
    write_json(&out.join(REGISTRATION_FILE), &reg)?;
    let quads: Vec<[Point; 4]> = reg.closeups.iter().map(|c| c.footprint.quad).collect();
    draw_overlay(&full, &quads).save_png(out.join(OVERLAY_FILE))?;
    Ok(reg)
}

fn image_dims(p: &Path) -> Result<(usize, usize)> {
    Ok(Image::load_rgb(p).with_context(|| p.display().to_string())?.dims())
}

/// Full image with each footprint outlined in green.
pub fn draw_overlay(full: &Image, quads: &[[Point; 4]]) -> Image {
    let mut img = full.to_rgb();
    let (w, h) = img.dims();
    for q in quads {
        for k in 0..4 {
            let (a, b) = (q[k], q[(k + 1) % 4]);
            let n = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as usize).max(1) * 2;
            for s in 0..=n {
                let t = s as f64 / n as f64;
                let (x, y) = (a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t);
                for (dx, dy) in [(0.0, 0.0), (-1.0, 0.0), (0.0, -1.0), (-1.0, -1.0)] {
                    let (px, py) = ((x + dx).floor(), (y + dy).floor());
                    if px >= 0.0 && py >= 0.0 && (px as usize) < w && (py as usize) < h {
                        for (c, v) in [0.0, 1.0, 0.0].into_iter().enumerate() {
                            img.set(px as usize, py as usize, c, v);
                        }
                    }
                }
            }
        }
    }
    img
}

/// Cuts the HR/LR pair dataset and checks its alignment.
pub fn dataset(cfg: &PipelineConfig, out: &Path) -> Result<(DatasetManifest, AlignmentReport)> {
    let reg = RegistrationFile::load(out)?;
    let full = Image::load_rgb(&reg.full)?;
    let closeups = reg
        .closeups
        .iter()
        .map(|c| Image::load_rgb(&c.path).with_context(|| c.path.display().to_string()))
        .collect::<Result<Vec<_>>>()?;
    let set = CaptureSet {
        full,
        closeups,
        transforms: reg.closeups.iter().map(|c| c.transform).collect(),
    };
    let dir = out.join(DATASET_DIR);
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    let d = &cfg.dataset;
    let manifest = build_dataset(&set, &cfg.degradation, d.patch_size, d.count, d.seed, &dir)?;
    let report = verify_alignment(&manifest)?;
    write_json(&dir.join("alignment.json"), &report)?;
    info!(
        "dataset: {} pairs, alignment mean {:.5}, max {:.5}, {} flagged",
        manifest.pairs.len(),
        report.mean_deviation,
        report.max_deviation,
        report.flagged
    );
    Ok((manifest, report))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BankSummary {
    pub pairs: usize,
    pub entries: usize,
    pub tile: usize,
    pub stride: usize,
}

pub fn exemplar_bank(cfg: &PipelineConfig, out: &Path) -> Result<(Arc<ExemplarBank>, BankSummary)> {
    let manifest = DatasetManifest::load(out.join(DATASET_DIR)).context("run `build-dataset` first")?;
    let p = &cfg.enhancer.exemplar;
    let bank = ExemplarBank::from_manifest(&manifest, p.tile, p.stride)?;
    let summary = BankSummary {
        pairs: manifest.pairs.len(),
        entries: bank.len(),
        tile: bank.tile(),
        stride: bank.stride(),
    };
    info!("exemplar bank: {} entries from {} pairs", summary.entries, summary.pairs);
    Ok((Arc::new(bank), summary))
}

pub fn build_enhancer(cfg: &PipelineConfig, out: &Path) -> Result<Box<dyn Enhancer>> {
    Ok(match cfg.enhancer.kind {
        EnhancerKind::Bicubic => Box::new(BicubicEnhancer),
        EnhancerKind::Exemplar => {
            let (bank, _) = exemplar_bank(cfg, out)?;
            Box::new(ExemplarEnhancer::new(bank, &cfg.enhancer.exemplar)?)
        }
        EnhancerKind::External => Box::new(ExternalEnhancer::start(cfg.enhancer.external.clone())?),
    })
}

/// Runs the mosaic into `dir`; multi-step runs wrap one-shot enhancers in
/// the iterative proxy.
pub fn mosaic(
    full: &Image,
    enhancer: Box<dyn Enhancer>,
    zoom: f64,
    params: &MosaicParams,
    dir: &Path,
) -> Result<MosaicRun> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    let run = if params.steps <= 1 {
        run_oneshot(full, &*enhancer, zoom, params, dir)?
    } else {
        let (cw, ch) = (scaled_len(full.width(), zoom), scaled_len(full.height(), zoom));
        let schedule = params.schedule(cw, ch)?;
        if enhancer.descriptor().mode == Mode::Iterative {
            run_iterative(full, &*enhancer, zoom, &schedule, params, dir)?
        } else {
            run_iterative(full, &IterativeProxy::new(enhancer), zoom, &schedule, params, dir)?
        }
    };
    write_json(&dir.join("schedule.json"), &run.schedule)?;
    let (w, h) = run.canvas.dims();
    info!("mosaic: {w}x{h} canvas, {} windows, peak {} samples", run.windows, run.peak_samples);
    Ok(run)
}

pub fn pyramid(canvas_dir: &Path, out_dir: &Path, name: &str, params: &PyramidParams) -> Result<PyramidBuild> {
    let bands = CanvasBands::open(canvas_dir)?;
    let b = build_pyramid(&bands, out_dir, name, params)?;
    info!(
        "pyramid {}: {} levels, {} tiles",
        b.pyramid.dzi_path().display(),
        b.pyramid.descriptor.max_level() + 1,
        b.tiles
    );
    Ok(b)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PositionsFile {
    pub patch_size: usize,
    pub positions: Vec<(usize, usize)>,
}

/// Something patches can be cut from.
pub enum PatchSource<'a> {
    Image(&'a Image),
    Bands(&'a CanvasBands),
}

impl PatchSource<'_> {
    fn dims(&self) -> (usize, usize) {
        match self {
            PatchSource::Image(i) => i.dims(),
            PatchSource::Bands(b) => b.dims(),
        }
    }

    fn features(&self, positions: &[(usize, usize)], p: usize) -> Result<Vec<Vec<f64>>> {
        match self {
            PatchSource::Image(i) => Ok(image_patch_features(i, positions, p)?),
            PatchSource::Bands(b) => positions
                .par_iter()
                .map(|&(x, y)| -> Result<Vec<f64>> {
                    let rows = b.read_rows(y, y + p)?;
                    Ok(patch_features(&rows.crop(x, 0, p, p)?)?)
                })
                .collect(),
        }
    }
}

/// LR-MAE of the output against `input`, and Fréchet/kernel distances
/// between output patches and reference (close-up) patches.
pub fn evaluate(
    input: &Image,
    output: PatchSource,
    zoom: f64,
    references: &[Image],
    spec: &PatchSampleSpec,
) -> Result<(MetricsReport, PositionsFile)> {
    let (w, h) = output.dims();
    let lr = if w * h <= LR_MAE_MAX_PIXELS {
        let g = match &output {
            PatchSource::Image(i) => (*i).clone(),
            PatchSource::Bands(b) => b.to_image()?,
        };
        Some(lr_mae(input, &g, zoom)?)
    } else {
        warn!("{w}x{h} output is too large for LR-MAE; skipped");
        None
    };
    let positions = sample_patch_positions((w, h), spec)?;
    let p = spec.patch_size;
    let (mut frechet, mut kid) = (None, None);
    if !references.is_empty() && positions.len() >= 2 {
        let generated = output.features(&positions, p)?;
        let per = spec.count.div_ceil(references.len());
        let mut real = Vec::new();
        for (i, r) in references.iter().enumerate() {
            let rs = PatchSampleSpec {
                count: per,
                seed: spec.seed.wrapping_add(1 + i as u64),
                positions: Vec::new(),
                ..spec.clone()
            };
            let pos = sample_patch_positions(r.dims(), &rs).with_context(|| format!("reference {i}"))?;
            real.extend(image_patch_features(r, &pos, p)?);
        }
        let (fd, k) = distribution_distances(&real, &generated)?;
        frechet = Some(fd);
        kid = Some(k);
    }
    let report = MetricsReport {
        lr_mae: lr,
        frechet,
        kid,
        patch_spec: PatchSampleSpec {
            positions: Vec::new(),
            ..spec.clone()
        },
        positions_file: None,
    };
    Ok((report, PositionsFile { patch_size: p, positions }))
}

#[derive(Clone, Debug, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub version: &'static str,
    pub threads: usize,
    pub deterministic: bool,
    pub config: PipelineConfig,
    pub capture: ResolvedCapture,
    pub zoom: f64,
    pub canvas: (usize, usize),
    pub windows: usize,
    pub enhancer: String,
    pub outputs: Vec<PathBuf>,
    pub timings: Vec<StageTiming>,
    pub metrics: Option<MetricsReport>,
}

pub struct Stopwatch {
    pub timings: Vec<StageTiming>,
}

impl Stopwatch {
    pub fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T, crate::CliError> {
        let t = Instant::now();
        info!("stage {stage}");
        let r = f().map_err(|source| crate::CliError::Stage { stage, error: source });
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        r
    }
}

/// Full pipeline: register, dataset, enhancer, mosaic, pyramid, metrics.
pub fn zoom(
    cfg: &PipelineConfig,
    cap: &ResolvedCapture,
    out: &Path,
    threads: usize,
    deterministic: bool,
) -> Result<RunManifest, crate::CliError> {
    let mut sw = Stopwatch { timings: Vec::new() };
    let reg = sw.run("register", || register(cfg, cap, out))?;
    if cfg.enhancer.kind == EnhancerKind::Exemplar {
        sw.run("build-dataset", || dataset(cfg, out))?;
    }
    let enhancer = sw.run("enhance-bank", || build_enhancer(cfg, out))?;
    let name = enhancer.descriptor().name;
    let zoom = cfg.zoom.unwrap_or_else(|| reg.max_zoom());
    let full = sw.run("load", || Ok(Image::load_rgb(&reg.full)?))?;
    let run = sw.run("mosaic", || {
        if !(zoom > 1.0) {
            bail!("zoom {zoom} is not above 1");
        }
        mosaic(&full, enhancer, zoom, &cfg.mosaic, &out.join(CANVAS_DIR))
    })?;
    let mut outputs = vec![out.join(REGISTRATION_FILE), out.join(CANVAS_DIR)];
    let pyr = sw.run("pyramid", || pyramid(&out.join(CANVAS_DIR), &out.join(PYRAMID_DIR), "zoom", &cfg.pyramid))?;
    outputs.push(pyr.pyramid.dzi_path().to_path_buf());
    if cfg.baseline {
        let dzi = sw.run("baseline", || {
            let one_shot = MosaicParams { steps: 1, ..cfg.mosaic };
            let dir = out.join(BASELINE_CANVAS_DIR);
            mosaic(&full, Box::new(BicubicEnhancer), zoom, &one_shot, &dir)?;
            Ok(pyramid(&dir, &out.join(PYRAMID_DIR), "bicubic", &cfg.pyramid)?.pyramid.dzi_path().to_path_buf())
        })?;
        outputs.push(dzi);
    }
    let report = sw.run("metrics", || {
        let refs = reg
            .closeups
            .iter()
            .map(|c| Ok(Image::load_rgb(&c.path)?))
            .collect::<Result<Vec<_>>>()?;
        let bands = CanvasBands::open(out.join(CANVAS_DIR))?;
        let (mut report, positions) = evaluate(&full, PatchSource::Bands(&bands), zoom, &refs, &cfg.metrics)?;
        let pos_path = out.join("positions.json");
        write_json(&pos_path, &positions)?;
        report.positions_file = Some(pos_path);
        write_json(&out.join("metrics.json"), &report)?;
        Ok(report)
    })?;
    outputs.push(out.join("metrics.json"));
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        threads,
        deterministic,
        config: cfg.clone(),
        capture: cap.clone(),
        zoom,
        canvas: run.canvas.dims(),
        windows: run.windows,
        enhancer: name,
        outputs,
        timings: sw.timings,
        metrics: Some(report),
    };
    write_json(&out.join("run.json"), &manifest).map_err(|error| crate::CliError::Stage {
        stage: "manifest",
        error,
    })?;
    Ok(manifest)
}
