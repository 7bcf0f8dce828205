//! Paired HR/LR patch datasets built from registered close-ups.
//!
//! Each close-up is color-matched to its footprint in the full image and
//! degraded as a whole; pairs are then cut from the matched close-up (HR)
//! and from its degraded version at the scaled origin (LR), so every pair
//! is pixel-aligned by construction.
//!
//! Sampling uses ChaCha8 seeded with the dataset seed. For every pair the
//! draws are, in order: close-up index, HR origin x, HR origin y, each
//! drawn with `gen_range` on `u64` bounds so the stream does not depend on
//! the platform word size.

use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::degrade::{self, DegradationRecipe, DegradeError};
use crate::geometry::{map_footprint, Footprint, Similarity};
use crate::raster::{Image, RasterError};

/// Smallest LR patch side accepted for a pair.
pub const MIN_LR_PATCH: usize = 16;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("capture has no close-ups")]
    NoCloseups,
    #[error("close-up {closeup}: scale {scale} is outside (0, 1)")]
    InvalidScale { closeup: usize, scale: f64 },
    #[error("close-up {closeup}: footprint does not intersect the full image")]
    FootprintOutsideImage { closeup: usize },
    #[error("patch size {patch} does not fit close-up {closeup} ({width}x{height})")]
    PatchTooLarge {
        patch: usize,
        closeup: usize,
        width: usize,
        height: usize,
    },
    #[error("close-up {closeup}: degraded patch would be {size} px, below {MIN_LR_PATCH}")]
    DegradedPatchTooSmall { closeup: usize, size: usize },
    #[error("manifest corrupt: {0}")]
    ManifestCorrupt(String),
    #[error(transparent)]
    Degrade(#[from] DegradeError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Full image, close-ups, and the registration of each close-up into the
/// full image (pixel-edge coordinates).
pub struct CaptureSet {
    pub full: Image,
    pub closeups: Vec<Image>,
    pub transforms: Vec<Similarity>,
}

impl CaptureSet {
    pub fn scale(&self, i: usize) -> f64 {
        self.transforms[i].scale()
    }
}

/// A close-up after color matching and degradation.
#[derive(Clone, Debug)]
pub struct PreparedCloseup {
    pub matched: Image,
    pub degraded: Image,
    pub recipe: DegradationRecipe,
    pub footprint: Footprint,
    /// Pixel rectangle of the full image the statistics came from.
    pub region: (usize, usize, usize, usize),
}

/// Color-matches close-up `i` to its footprint in the full image and
/// degrades it. `base` supplies every recipe field except the scale and
/// the JPEG decision.
pub fn prepare_closeup(
    set: &CaptureSet,
    i: usize,
    base: &DegradationRecipe,
) -> Result<PreparedCloseup, DatasetError> {
    let closeup = &set.closeups[i];
    let scale = set.scale(i);
    if !(scale > 0.0 && scale < 1.0) {
        return Err(DatasetError::InvalidScale { closeup: i, scale });
    }
    let footprint = map_footprint(&set.transforms[i], closeup.width() as f64, closeup.height() as f64);
    let (fw, fh) = set.full.dims();
    let region = footprint
        .aabb
        .pixel_rect(fw, fh)
        .ok_or(DatasetError::FootprintOutsideImage { closeup: i })?;
    if !footprint.aabb.contained_in(fw, fh) {
        warn!("close-up {i}: footprint extends past the full image; statistics use the clipped region");
    }
    let (x, y, w, h) = region;
    let stats = degrade::color_stats_rect(&set.full, x, y, w, h)?;
    let matched = degrade::match_color(&closeup.to_rgb(), &stats)?;

    let reference = if w >= 16 && h >= 16 {
        Some(degrade::blockiness(&set.full.crop(x, y, w, h)?)?)
    } else {
        warn!("close-up {i}: footprint {w}x{h} too small for a blockiness reference; JPEG disabled");
        None
    };
    let recipe = DegradationRecipe {
        scale,
        ..base.clone()
    };
    let (degraded, recipe) = degrade::degrade_conditional(&matched, &recipe, reference)?;
    Ok(PreparedCloseup {
        matched,
        degraded,
        recipe,
        footprint,
        region,
    })
}

/// Position of one sampled pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPlacement {
    pub closeup: usize,
    pub origin: (usize, usize),
    pub lr_origin: (usize, usize),
    pub lr_size: usize,
}

/// Size, degraded size and scale of one close-up.
pub type CloseupGeometry = ((usize, usize), (usize, usize), f64);

/// Draws `count` pair placements. The LR patch side is
/// `round(patch_size × scale)`; the LR origin is the HR origin scaled by
/// the per-axis ratio of degraded to original size (the exact grid ratio of
/// the degraded image), rounded and clamped so the LR patch fits.
pub fn plan_pairs(
    closeups: &[CloseupGeometry],
    patch_size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<PairPlacement>, DatasetError> {
    if closeups.is_empty() {
        return Err(DatasetError::NoCloseups);
    }
    let mut lr_sizes = Vec::with_capacity(closeups.len());
    for (i, &((w, h), _, scale)) in closeups.iter().enumerate() {
        if patch_size == 0 || patch_size > w || patch_size > h {
            return Err(DatasetError::PatchTooLarge {
                patch: patch_size,
                closeup: i,
                width: w,
                height: h,
            });
        }
        let lr = degrade::scaled_len(patch_size, scale);
        if lr < MIN_LR_PATCH {
            return Err(DatasetError::DegradedPatchTooSmall { closeup: i, size: lr });
        }
        lr_sizes.push(lr);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let i = rng.gen_range(0..closeups.len() as u64) as usize;
        let ((w, h), (dw, dh), _) = closeups[i];
        let x = rng.gen_range(0..=(w - patch_size) as u64) as usize;
        let y = rng.gen_range(0..=(h - patch_size) as u64) as usize;
        let lr = lr_sizes[i];
        let u = ((x as f64 * dw as f64 / w as f64).round() as usize).min(dw.saturating_sub(lr));
        let v = ((y as f64 * dh as f64 / h as f64).round() as usize).min(dh.saturating_sub(lr));
        out.push(PairPlacement {
            closeup: i,
            origin: (x, y),
            lr_origin: (u, v),
            lr_size: lr,
        });
    }
    Ok(out)
}

/// An aligned pair held in memory.
#[derive(Clone, Debug)]
pub struct PatchPair {
    pub placement: PairPlacement,
    pub hr: Image,
    pub lr: Image,
}

pub fn cut_pair(prepared: &[PreparedCloseup], placement: PairPlacement, patch_size: usize) -> Result<PatchPair, DatasetError> {
    let pc = &prepared[placement.closeup];
    let (x, y) = placement.origin;
    let (u, v) = placement.lr_origin;
    Ok(PatchPair {
        placement,
        hr: pc.matched.crop(x, y, patch_size, patch_size)?,
        lr: pc.degraded.crop(u, v, placement.lr_size, placement.lr_size)?,
    })
}

/// Samples `count` pairs from prepared close-ups.
pub fn sample_pairs(
    prepared: &[PreparedCloseup],
    patch_size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<PatchPair>, DatasetError> {
    let sizes: Vec<_> = prepared
        .iter()
        .map(|p| (p.matched.dims(), p.degraded.dims(), p.recipe.scale))
        .collect();
    plan_pairs(&sizes, patch_size, count, seed)?
        .into_iter()
        .map(|pl| cut_pair(prepared, pl, patch_size))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloseupEntry {
    pub scale: f64,
    pub recipe: DegradationRecipe,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: usize,
    pub closeup: usize,
    pub hr: String,
    pub lr: String,
    pub origin: [usize; 2],
    pub lr_origin: [usize; 2],
}

/// `manifest.json` of a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub patch_size: usize,
    pub closeups: Vec<CloseupEntry>,
    pub pairs: Vec<PairEntry>,
    #[serde(skip)]
    pub dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<DatasetManifest, DatasetError> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join("manifest.json"))
            .map_err(|e| DatasetError::ManifestCorrupt(format!("{}: {e}", dir.join("manifest.json").display())))?;
        let mut m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| DatasetError::ManifestCorrupt(e.to_string()))?;
        m.dir = dir.to_path_buf();
        for p in &m.pairs {
            if p.closeup >= m.closeups.len() {
                return Err(DatasetError::ManifestCorrupt(format!(
                    "pair {} references close-up {}",
                    p.id, p.closeup
                )));
            }
        }
        Ok(m)
    }

    pub fn lr_size(&self, closeup: usize) -> usize {
        degrade::scaled_len(self.patch_size, self.closeups[closeup].scale)
    }

    /// Loads a pair's images, checking their recorded dimensions.
    pub fn load_pair(&self, entry: &PairEntry) -> Result<(Image, Image), DatasetError> {
        let load = |rel: &str, side: usize| -> Result<Image, DatasetError> {
            let img = Image::load_rgb(self.dir.join(rel))
                .map_err(|e| DatasetError::ManifestCorrupt(format!("{rel}: {e}")))?;
            if img.dims() != (side, side) {
                return Err(DatasetError::ManifestCorrupt(format!(
                    "{rel} is {:?}, expected {side}x{side}",
                    img.dims()
                )));
            }
            Ok(img)
        };
        Ok((
            load(&entry.hr, self.patch_size)?,
            load(&entry.lr, self.lr_size(entry.closeup))?,
        ))
    }
}

/// Writes pairs and `manifest.json` into `dir`.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    prepared: &[PreparedCloseup],
    pairs: &[PatchPair],
    patch_size: usize,
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("pairs"))?;
    let entries: Vec<PairEntry> = pairs
        .par_iter()
        .enumerate()
        .map(|(id, p)| -> Result<PairEntry, DatasetError> {
            let hr = format!("pairs/{id:06}_hr.png");
            let lr = format!("pairs/{id:06}_lr.png");
            p.hr.save_png(dir.join(&hr))?;
            p.lr.save_png(dir.join(&lr))?;
            Ok(PairEntry {
                id,
                closeup: p.placement.closeup,
                hr,
                lr,
                origin: [p.placement.origin.0, p.placement.origin.1],
                lr_origin: [p.placement.lr_origin.0, p.placement.lr_origin.1],
            })
        })
        .collect::<Result<_, _>>()?;
    let manifest = DatasetManifest {
        seed,
        patch_size,
        closeups: prepared
            .iter()
            .map(|p| CloseupEntry {
                scale: p.recipe.scale,
                recipe: p.recipe.clone(),
                width: p.matched.width(),
                height: p.matched.height(),
            })
            .collect(),
        pairs: entries,
        dir: dir.to_path_buf(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(manifest)
}

/// Prepares every close-up, samples pairs and writes the dataset.
pub fn build_dataset(
    set: &CaptureSet,
    base: &DegradationRecipe,
    patch_size: usize,
    count: usize,
    seed: u64,
    dir: impl AsRef<Path>,
) -> Result<DatasetManifest, DatasetError> {
    if set.closeups.is_empty() {
        return Err(DatasetError::NoCloseups);
    }
    let prepared = (0..set.closeups.len())
        .into_par_iter()
        .map(|i| prepare_closeup(set, i, base))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs = sample_pairs(&prepared, patch_size, count, seed)?;
    write_dataset(dir, &prepared, &pairs, patch_size, seed)
}

/// Deviation above which a pair is reported as misaligned.
pub const ALIGNMENT_FLAG_THRESHOLD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub id: usize,
    pub deviation: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub pairs: Vec<PairCheck>,
    pub mean_deviation: f64,
    pub max_deviation: f64,
    pub flagged: usize,
}

/// LR pixels next to the patch edge that the degradation kernels can pull
/// from outside the HR patch.
pub fn alignment_border(recipe: &DegradationRecipe) -> usize {
    (3.0 + 4.0 * recipe.extra_downsample).ceil() as usize
}

/// Recomputes each pair's LR patch from its HR patch with the recorded
/// recipe and compares it with the stored LR patch, away from the border
/// where kernel support reaches outside the HR patch.
pub fn verify_alignment(manifest: &DatasetManifest) -> Result<AlignmentReport, DatasetError> {
    let checks = manifest
        .pairs
        .par_iter()
        .map(|entry| -> Result<PairCheck, DatasetError> {
            let (hr, lr) = manifest.load_pair(entry)?;
            let c = &manifest.closeups[entry.closeup];
            let side = lr.width();
            let rect = (entry.lr_origin[0], entry.lr_origin[1], side, side);
            let origin = (entry.origin[0] as f64, entry.origin[1] as f64);
            let expected = degrade::degrade_window(&hr, origin, (c.width, c.height), &c.recipe, rect)?;
            let mut border = alignment_border(&c.recipe);
            if 2 * border >= side {
                border = side / 4;
            }
            let inner = side - 2 * border;
            let a = lr.crop(border, border, inner, inner)?;
            let b = expected.crop(border, border, inner, inner)?;
            let deviation = a.mean_abs_diff(&b);
            Ok(PairCheck {
                id: entry.id,
                deviation,
                flagged: deviation > ALIGNMENT_FLAG_THRESHOLD,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = checks.len();
    let mean_deviation = if n == 0 {
        0.0
    } else {
        checks.iter().map(|c| c.deviation).sum::<f64>() / n as f64
    };
    Ok(AlignmentReport {
        max_deviation: checks.iter().map(|c| c.deviation).fold(0.0, f64::max),
        flagged: checks.iter().filter(|c| c.flagged).count(),
        mean_deviation,
        pairs: checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_errors() {
        let sizes = [((100, 80), (25, 20), 0.25)];
        assert!(matches!(
            plan_pairs(&sizes, 90, 1, 0),
            Err(DatasetError::PatchTooLarge { .. })
        ));
        assert!(matches!(
            plan_pairs(&sizes, 60, 1, 0),
            Err(DatasetError::DegradedPatchTooSmall { size: 15, .. })
        ));
        assert!(plan_pairs(&sizes, 64, 0, 0).unwrap().is_empty());
        assert!(matches!(plan_pairs(&[], 8, 1, 0), Err(DatasetError::NoCloseups)));
    }

    #[test]
    fn lr_patch_always_fits() {
        let sizes = [((101, 77), (26, 20), 0.26), ((300, 300), (100, 100), 1.0 / 3.0)];
        for p in plan_pairs(&sizes, 77, 500, 3).unwrap() {
            let (_, (dw, dh), _) = sizes[p.closeup];
            assert!(p.lr_origin.0 + p.lr_size <= dw && p.lr_origin.1 + p.lr_size <= dh);
        }
    }
}
