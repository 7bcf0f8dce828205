use std::path::{Path, PathBuf};

use gigazoom::degrade::DegradationRecipe;
use gigazoom::enhance::{ExemplarParams, ExternalConfig};
use gigazoom::metrics::PatchSampleSpec;
use gigazoom::mosaic::MosaicParams;
use gigazoom::pyramid::PyramidParams;
use gigazoom::tracker::RegistrationParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Input files. `dir` points at a capture directory laid out as
/// `full.png`, `closeups/*.png`, `videos/video_*/`; explicit lists win.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureConfig {
    pub dir: Option<PathBuf>,
    pub full: Option<PathBuf>,
    pub closeups: Vec<PathBuf>,
    pub videos: Vec<PathBuf>,
    /// Optional track file per video; an entry replaces the built-in tracker.
    pub tracks: Vec<Option<PathBuf>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub patch_size: usize,
    pub count: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            patch_size: 128,
            count: 200,
            seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnhancerKind {
    Bicubic,
    Exemplar,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhancerConfig {
    pub kind: EnhancerKind,
    pub exemplar: ExemplarParams,
    pub external: ExternalConfig,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        EnhancerConfig {
            kind: EnhancerKind::Exemplar,
            exemplar: ExemplarParams::default(),
            external: ExternalConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub capture: CaptureConfig,
    pub registration: RegistrationParams,
    /// Base degradation; the scale comes from registration.
    pub degradation: DegradationRecipe,
    pub dataset: DatasetConfig,
    pub enhancer: EnhancerConfig,
    /// Output zoom; defaults to 1/s of the most zoomed-in close-up.
    pub zoom: Option<f64>,
    pub mosaic: MosaicParams,
    pub pyramid: PyramidParams,
    pub metrics: PatchSampleSpec,
    /// Also render a bicubic mosaic and pyramid for A/B viewing.
    pub baseline: bool,
    pub output: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            capture: CaptureConfig::default(),
            registration: RegistrationParams::default(),
            degradation: DegradationRecipe::default(),
            dataset: DatasetConfig::default(),
            enhancer: EnhancerConfig::default(),
            zoom: None,
            mosaic: MosaicParams::default(),
            pyramid: PyramidParams::default(),
            metrics: PatchSampleSpec {
                patch_size: 64,
                count: 500,
                ..PatchSampleSpec::default()
            },
            baseline: false,
            output: PathBuf::from("out"),
        }
    }
}

/// Capture files after directory discovery, all paths absolute or relative
/// to the working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCapture {
    pub full: PathBuf,
    pub closeups: Vec<PathBuf>,
    pub videos: Vec<PathBuf>,
    pub tracks: Vec<Option<PathBuf>>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    /// Makes relative paths relative to `base` (the config file's folder).
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        let c = &mut self.capture;
        c.dir.iter_mut().for_each(fix);
        c.full.iter_mut().for_each(fix);
        c.closeups.iter_mut().for_each(fix);
        c.videos.iter_mut().for_each(fix);
        c.tracks.iter_mut().flatten().for_each(fix);
        fix(&mut self.output);
        let cmd = &mut self.enhancer.external.command;
        if cmd.components().count() > 1 {
            fix(cmd);
        }
    }

    pub fn resolve_capture(&self) -> Result<ResolvedCapture, CliError> {
        let c = &self.capture;
        let missing = |what: &str, p: &Path| CliError::Config(format!("{what} not found: {}", p.display()));
        let full = match (&c.full, &c.dir) {
            (Some(f), _) => f.clone(),
            (None, Some(d)) => d.join("full.png"),
            (None, None) => return Err(CliError::Config("capture.full or capture.dir is required".into())),
        };
        let list = |explicit: &[PathBuf], sub: &str, dirs: bool| -> Result<Vec<PathBuf>, CliError> {
            if !explicit.is_empty() {
                return Ok(explicit.to_vec());
            }
            let Some(d) = &c.dir else { return Ok(Vec::new()) };
            let root = d.join(sub);
            let entries = std::fs::read_dir(&root).map_err(|_| missing("directory", &root))?;
            let mut out: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| if dirs { p.is_dir() } else { p.extension().is_some_and(|x| x == "png") })
                .collect();
            out.sort();
            Ok(out)
        };
        let closeups = list(&c.closeups, "closeups", false)?;
        let videos = list(&c.videos, "videos", true)?;
        if closeups.is_empty() {
            return Err(CliError::Config("no close-ups configured".into()));
        }
        if videos.len() != closeups.len() {
            return Err(CliError::Config(format!(
                "{} close-ups need {} videos (one from each close-up to the next, the last to the full view), got {}",
                closeups.len(),
                closeups.len(),
                videos.len()
            )));
        }
        if c.tracks.len() > videos.len() {
            return Err(CliError::Config(format!(
                "{} track files for {} videos",
                c.tracks.len(),
                videos.len()
            )));
        }
        if !full.is_file() {
            return Err(missing("full image", &full));
        }
        for p in &closeups {
            if !p.is_file() {
                return Err(missing("close-up", p));
            }
        }
        for p in &videos {
            if !p.is_dir() {
                return Err(missing("video directory", p));
            }
        }
        for p in c.tracks.iter().flatten() {
            if !p.is_file() {
                return Err(missing("track file", p));
            }
        }
        let mut tracks = c.tracks.clone();
        tracks.resize(videos.len(), None);
        Ok(ResolvedCapture {
            full,
            closeups,
            videos,
            tracks,
        })
    }

    /// Numeric checks that do not need the inputs.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.mosaic.validate().map_err(|e| CliError::Config(format!("mosaic: {e}")))?;
        self.degradation
            .validate()
            .map_err(|e| CliError::Config(format!("degradation: {e}")))?;
        if let Some(z) = self.zoom {
            if !(z > 1.0) || !z.is_finite() {
                return bad(format!("zoom must be > 1, got {z}"));
            }
        }
        if self.dataset.patch_size == 0 || self.dataset.count == 0 {
            return bad("dataset patch_size and count must be positive".into());
        }
        if self.pyramid.tile_size == 0 || self.pyramid.overlap >= self.pyramid.tile_size {
            return bad(format!(
                "pyramid tile_size {} / overlap {}",
                self.pyramid.tile_size, self.pyramid.overlap
            ));
        }
        if self.enhancer.kind == EnhancerKind::External && self.enhancer.external.command.as_os_str().is_empty() {
            return bad("enhancer.external.command is required".into());
        }
        if self.registration.segment_length < 2 {
            return bad("registration.segment_length must be at least 2".into());
        }
        Ok(())
    }
}
