//! Consistency and distribution metrics.
//!
//! `lr_mae` checks that an upscaled result still explains its input.
//! Fréchet and kernel distances compare patch-feature distributions; the
//! features are a small hand-built descriptor, so only orderings between
//! methods mean anything, not absolute values.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::degrade::{laplacian_variance, resample_to, scaled_len};
use crate::raster::Image;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("patch {patch} does not fit a {width}x{height} image")]
    PatchTooLarge { patch: usize, width: usize, height: usize },
    #[error("patch {width}x{height} is smaller than {min}x{min}")]
    TooSmall { width: usize, height: usize, min: usize },
    #[error("covariance is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("need at least 2 samples per set, got {0}")]
    TooFewSamples(usize),
    #[error("feature vectors have {got} dims, expected {expected}")]
    FeatureDims { expected: usize, got: usize },
    #[error("invalid zoom {0}")]
    InvalidZoom(f64),
}

pub const FEATURE_DIM: usize = 38;
pub const MIN_PATCH: usize = 32;
const ORIENT_BINS: usize = 8;
const LUMA_BINS: usize = 12;
/// Allowed negative eigenvalue, relative to the largest magnitude.
const PSD_TOL: f64 = 1e-8;

/// Mean absolute difference between `input` and the bicubic downsample of
/// `output` back to the input grid.
pub fn lr_mae(input: &Image, output: &Image, zoom: f64) -> Result<f64, MetricsError> {
    if !(zoom > 0.0) || !zoom.is_finite() {
        return Err(MetricsError::InvalidZoom(zoom));
    }
    let (w, h) = input.dims();
    let expected = (scaled_len(w, zoom), scaled_len(h, zoom));
    if output.dims() != expected {
        return Err(MetricsError::DimensionMismatch {
            expected,
            got: output.dims(),
        });
    }
    let (a, b) = if input.channels() == output.channels() {
        (input.clone(), output.clone())
    } else {
        (input.to_rgb(), output.to_rgb())
    };
    Ok(a.mean_abs_diff(&resample_to(&b, w, h)))
}

/// Where to cut comparison patches. Non-empty `positions` are used as given,
/// which keeps crops fixed across the methods being compared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchSampleSpec {
    pub patch_size: usize,
    pub count: usize,
    pub seed: u64,
    pub positions: Vec<(usize, usize)>,
}

impl Default for PatchSampleSpec {
    fn default() -> Self {
        PatchSampleSpec {
            patch_size: 299,
            count: 3000,
            seed: 0,
            positions: Vec::new(),
        }
    }
}

/// Top-left corners of patches, uniform over the valid rectangle.
pub fn sample_patch_positions(dims: (usize, usize), spec: &PatchSampleSpec) -> Result<Vec<(usize, usize)>, MetricsError> {
    let (w, h) = dims;
    let p = spec.patch_size;
    let too_large = || MetricsError::PatchTooLarge {
        patch: p,
        width: w,
        height: h,
    };
    if p == 0 || p > w || p > h {
        return Err(too_large());
    }
    if !spec.positions.is_empty() {
        if spec.positions.iter().any(|&(x, y)| x + p > w || y + p > h) {
            return Err(too_large());
        }
        return Ok(spec.positions.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.count)
        .map(|_| (rng.gen_range(0..=w - p), rng.gen_range(0..=h - p)))
        .collect())
}

/// Features of every patch at `positions`, computed in parallel.
pub fn image_patch_features(
    img: &Image,
    positions: &[(usize, usize)],
    patch_size: usize,
) -> Result<Vec<Vec<f64>>, MetricsError> {
    let (w, h) = img.dims();
    positions
        .par_iter()
        .map(|&(x, y)| {
            let patch = img.crop(x, y, patch_size, patch_size).map_err(|_| MetricsError::PatchTooLarge {
                patch: patch_size,
                width: w,
                height: h,
            })?;
            patch_features(&patch)
        })
        .collect()
}

/// 38-dim descriptor: per-channel mean, std and skewness (9), magnitude
/// weighted 8-bin gradient orientation histograms of the luma at full and
/// half resolution (16), a 12-bin luma histogram (12) and the Laplacian
/// variance (1).
pub fn patch_features(patch: &Image) -> Result<Vec<f64>, MetricsError> {
    let (w, h) = patch.dims();
    if w < MIN_PATCH || h < MIN_PATCH {
        return Err(MetricsError::TooSmall {
            width: w,
            height: h,
            min: MIN_PATCH,
        });
    }
    let rgb = patch.to_rgb();
    let mut f = Vec::with_capacity(FEATURE_DIM);
    for c in 0..3 {
        let vals: Vec<f64> = rgb.data().iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        f.extend(moments(&vals));
    }
    let luma = rgb.to_luma();
    f.extend(orientation_histogram(&luma));
    f.extend(orientation_histogram(&halve(&luma)));
    let n = (w * h) as f64;
    let mut hist = [0.0; LUMA_BINS];
    for &v in luma.data() {
        let b = ((v.clamp(0.0, 1.0) * LUMA_BINS as f32) as usize).min(LUMA_BINS - 1);
        hist[b] += 1.0 / n;
    }
    f.extend(hist);
    f.push(laplacian_variance(&luma));
    Ok(f)
}

fn moments(vals: &[f64]) -> [f64; 3] {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let skew = if std < 1e-12 {
        0.0
    } else {
        vals.iter().map(|v| ((v - mean) / std).powi(3)).sum::<f64>() / n
    };
    [mean, std, skew]
}

/// Central-difference gradients on interior pixels; angle bins cover the
/// full circle, normalised by the interior pixel count.
fn orientation_histogram(luma: &Image) -> [f64; ORIENT_BINS] {
    let (w, h) = luma.dims();
    let mut hist = [0.0; ORIENT_BINS];
    if w < 3 || h < 3 {
        return hist;
    }
    let n = ((w - 2) * (h - 2)) as f64;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (luma.get(x + 1, y, 0) - luma.get(x - 1, y, 0)) as f64 / 2.0;
            let gy = (luma.get(x, y + 1, 0) - luma.get(x, y - 1, 0)) as f64 / 2.0;
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let t = (gy.atan2(gx) + std::f64::consts::PI) / std::f64::consts::TAU;
            let b = ((t * ORIENT_BINS as f64) as usize) % ORIENT_BINS;
            hist[b] += mag / n;
        }
    }
    hist
}

/// 2× box downsample, dropping an odd last row or column.
fn halve(luma: &Image) -> Image {
    let (w, h) = (luma.width() / 2, luma.height() / 2);
    Image::from_fn(w, h, 1, |x, y, _| {
        (luma.get(2 * x, 2 * y, 0)
            + luma.get(2 * x + 1, 2 * y, 0)
            + luma.get(2 * x, 2 * y + 1, 0)
            + luma.get(2 * x + 1, 2 * y + 1, 0))
            / 4.0
    })
}

/// Gaussian summary of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianStats {
    /// Two-pass sample mean and (n − 1)-normalised covariance.
    pub fn from_features(feats: &[Vec<f64>]) -> Result<GaussianStats, MetricsError> {
        let n = feats.len();
        if n < 2 {
            return Err(MetricsError::TooFewSamples(n));
        }
        let d = check_dims(feats, feats[0].len())?;
        let mut mean = DVector::zeros(d);
        for f in feats {
            mean += DVector::from_column_slice(f);
        }
        mean /= n as f64;
        let mut centered = DMatrix::zeros(d, n);
        for (j, f) in feats.iter().enumerate() {
            centered.set_column(j, &(DVector::from_column_slice(f) - &mean));
        }
        let cov = &centered * centered.transpose() / (n - 1) as f64;
        Ok(GaussianStats {
            mean,
            covariance: (&cov + cov.transpose()) * 0.5,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn check_dims(feats: &[Vec<f64>], d: usize) -> Result<usize, MetricsError> {
    match feats.iter().find(|f| f.len() != d) {
        Some(f) => Err(MetricsError::FeatureDims {
            expected: d,
            got: f.len(),
        }),
        None => Ok(d),
    }
}

/// Eigendecomposition of a symmetric PSD matrix with small negative
/// eigenvalues clamped to zero.
fn psd_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, MetricsError> {
    let mut e = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let scale = e.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for v in e.eigenvalues.iter_mut() {
        if *v < -PSD_TOL * scale {
            return Err(MetricsError::NotPsd(*v));
        }
        *v = v.max(0.0);
    }
    Ok(e)
}

/// Squared Fréchet distance between two Gaussians:
/// `|μa − μb|² + tr(Σa + Σb − 2 (Σa Σb)^½)`. The trace of the square root
/// is taken from the eigenvalues of the symmetric `Σa^½ Σb Σa^½`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64, MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::FeatureDims {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let ea = psd_eigen(&a.covariance)?;
    psd_eigen(&b.covariance)?;
    let sqrt_vals = ea.eigenvalues.map(f64::sqrt);
    let sqrt_a = &ea.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * ea.eigenvectors.transpose();
    let inner = &sqrt_a * &b.covariance * &sqrt_a;
    let em = psd_eigen(&inner)?;
    let tr_sqrt: f64 = em.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let diff = (&a.mean - &b.mean).norm_squared();
    let d = diff + a.covariance.trace() + b.covariance.trace() - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}

/// Polynomial kernel `(x·y / d + 1)³`.
pub fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / x.len() as f64 + 1.0).powi(3)
}

/// Unbiased MMD² with the cubic polynomial kernel. Diagonal terms are
/// excluded, so the value can be slightly negative.
pub fn kernel_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, MetricsError> {
    let (m, n) = (a.len(), b.len());
    if m < 2 || n < 2 {
        return Err(MetricsError::TooFewSamples(m.min(n)));
    }
    let d = check_dims(a, a[0].len())?;
    check_dims(b, d)?;
    // Row sums are collected before adding so the total does not depend on
    // the thread count.
    let within = |s: &[Vec<f64>]| -> f64 {
        let rows: Vec<f64> = (0..s.len())
            .into_par_iter()
            .map(|i| (i + 1..s.len()).map(|j| poly_kernel(&s[i], &s[j])).sum::<f64>())
            .collect();
        rows.iter().sum::<f64>() * 2.0
    };
    let kaa = within(a) / (m * (m - 1)) as f64;
    let kbb = within(b) / (n * (n - 1)) as f64;
    let cross: Vec<f64> = a
        .par_iter()
        .map(|x| b.iter().map(|y| poly_kernel(x, y)).sum::<f64>())
        .collect();
    let kab = cross.iter().sum::<f64>() / (m * n) as f64;
    Ok(kaa + kbb - 2.0 * kab)
}

/// Fréchet and kernel distances between two feature sets.
pub fn distribution_distances(real: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<(f64, f64), MetricsError> {
    let fd = frechet_distance(&GaussianStats::from_features(real)?, &GaussianStats::from_features(generated)?)?;
    Ok((fd, kernel_distance(real, generated)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub lr_mae: Option<f64>,
    pub frechet: Option<f64>,
    pub kid: Option<f64>,
    pub patch_spec: PatchSampleSpec,
    pub positions_file: Option<PathBuf>,
}
