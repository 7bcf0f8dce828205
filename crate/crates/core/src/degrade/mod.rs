//! Degradation of close-up exemplars so they resemble the corresponding
//! region of the full-view image: histogram color matching, bicubic
//! downsampling to the registered scale, a blur round trip and conditional
//! JPEG compression.

mod jpeg;
mod resample;

pub use jpeg::{decode_jpeg, encode_jpeg, jpeg_roundtrip, scaled_quant_table};
pub use resample::{catmull_rom, resample_bicubic, resample_region, resample_to, scaled_len};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Aabb;
use crate::raster::Image;

#[derive(Debug, Error)]
pub enum DegradeError {
    #[error("region is empty or outside the image")]
    EmptyRegion,
    #[error("resampled output would be {width}x{height}")]
    OutputTooSmall { width: usize, height: usize },
    #[error("image {width}x{height} is below the 16x16 minimum")]
    TooSmall { width: usize, height: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("codec: {0}")]
    Codec(String),
}

pub const BINS: usize = 256;

/// Per-channel 256-bin histograms (normalised to sum 1) and their CDFs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorStats {
    pub hist: Vec<Vec<f64>>,
    pub cdf: Vec<Vec<f64>>,
}

#[inline]
fn bin_of(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

impl ColorStats {
    fn from_counts(counts: Vec<[u64; BINS]>, total: u64) -> ColorStats {
        let mut hist = Vec::with_capacity(counts.len());
        let mut cdf = Vec::with_capacity(counts.len());
        for ch in counts {
            let mut h = vec![0.0; BINS];
            let mut c = vec![0.0; BINS];
            let mut running = 0u64;
            for i in 0..BINS {
                h[i] = ch[i] as f64 / total as f64;
                running += ch[i];
                c[i] = running as f64 / total as f64;
            }
            hist.push(h);
            cdf.push(c);
        }
        ColorStats { hist, cdf }
    }

    pub fn channels(&self) -> usize {
        self.hist.len()
    }
}

/// Histograms over the pixels of `region` (clipped to the image).
pub fn color_stats(img: &Image, region: &Aabb) -> Result<ColorStats, DegradeError> {
    let (x, y, w, h) = region
        .pixel_rect(img.width(), img.height())
        .ok_or(DegradeError::EmptyRegion)?;
    color_stats_rect(img, x, y, w, h)
}

pub fn color_stats_rect(
    img: &Image,
    x: usize,
    y: usize,
    w: usize,
    h: usize,
) -> Result<ColorStats, DegradeError> {
    if w == 0 || h == 0 || x + w > img.width() || y + h > img.height() {
        return Err(DegradeError::EmptyRegion);
    }
    let ch = img.channels();
    let mut counts = vec![[0u64; BINS]; ch];
    for row in y..y + h {
        for col in x..x + w {
            for (c, &v) in img.pixel(col, row).iter().enumerate() {
                counts[c][bin_of(v)] += 1;
            }
        }
    }
    Ok(ColorStats::from_counts(counts, (w * h) as u64))
}

pub fn color_stats_full(img: &Image) -> Result<ColorStats, DegradeError> {
    color_stats_rect(img, 0, 0, img.width(), img.height())
}

/// Per-channel lookup table mapping source bin `i` to the smallest target
/// bin whose CDF reaches the source CDF at `i`. Monotone non-decreasing.
pub fn matching_lut(source: &ColorStats, target: &ColorStats) -> Vec<[u8; BINS]> {
    source
        .cdf
        .iter()
        .zip(&target.cdf)
        .map(|(src, dst)| {
            let mut lut = [0u8; BINS];
            let mut j = 0;
            for i in 0..BINS {
                while j < BINS - 1 && dst[j] < src[i] - 1e-12 {
                    j += 1;
                }
                lut[i] = j as u8;
            }
            lut
        })
        .collect()
}

/// Histogram matching of every channel of `img` onto `target`.
pub fn match_color(img: &Image, target: &ColorStats) -> Result<Image, DegradeError> {
    if target.channels() != img.channels() {
        return Err(DegradeError::InvalidParameter(format!(
            "{} target channels for a {}-channel image",
            target.channels(),
            img.channels()
        )));
    }
    if img.width() == 0 || img.height() == 0 {
        return Ok(img.clone());
    }
    let source = color_stats_full(img)?;
    let luts = matching_lut(&source, target);
    let ch = img.channels();
    let mut out = img.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = luts[i % ch][bin_of(*v)] as f32 / 255.0;
    }
    Ok(out)
}

/// Ratio of mean absolute luma difference across 8×8 block boundaries to the
/// mean absolute difference between other adjacent pixels. 1.0 means no
/// block structure; a constant image is defined as 1.0.
pub fn blockiness(img: &Image) -> Result<f64, DegradeError> {
    let (w, h) = img.dims();
    if w < 16 || h < 16 {
        return Err(DegradeError::TooSmall {
            width: w,
            height: h,
        });
    }
    let luma = img.to_luma();
    let (mut edge_sum, mut edge_n, mut inner_sum, mut inner_n) = (0.0f64, 0u64, 0.0f64, 0u64);
    let mut add = |boundary: bool, d: f64| {
        if boundary {
            edge_sum += d;
            edge_n += 1;
        } else {
            inner_sum += d;
            inner_n += 1;
        }
    };
    for y in 0..h {
        for x in 1..w {
            add(x % 8 == 0, (luma.get(x, y, 0) - luma.get(x - 1, y, 0)).abs() as f64);
        }
    }
    for y in 1..h {
        for x in 0..w {
            add(y % 8 == 0, (luma.get(x, y, 0) - luma.get(x, y - 1, 0)).abs() as f64);
        }
    }
    Ok(guarded_ratio(edge_sum / edge_n as f64, inner_sum / inner_n as f64))
}

/// `num / den` with both sides offset so that 0/0 reads as 1.
pub(crate) fn guarded_ratio(num: f64, den: f64) -> f64 {
    const EPS: f64 = 1e-6;
    (num + EPS) / (den + EPS)
}

/// Parameters of the degradation operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationRecipe {
    /// Close-up to full-image scale, `0 < scale < 1`.
    pub scale: f64,
    pub extra_downsample: f64,
    pub jpeg_quality: u8,
    pub jpeg_enabled: bool,
    pub blockiness_ratio_threshold: f64,
}

impl Default for DegradationRecipe {
    fn default() -> Self {
        Self {
            scale: 0.5,
            extra_downsample: 2.0,
            jpeg_quality: 75,
            jpeg_enabled: false,
            blockiness_ratio_threshold: 1.2,
        }
    }
}

impl DegradationRecipe {
    pub fn with_scale(scale: f64) -> Self {
        Self {
            scale,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DegradeError> {
        if !(self.scale > 0.0 && self.scale < 1.0) {
            return Err(DegradeError::InvalidParameter(format!("scale {}", self.scale)));
        }
        if !(self.extra_downsample >= 1.0) {
            return Err(DegradeError::InvalidParameter(format!(
                "extra_downsample {}",
                self.extra_downsample
            )));
        }
        if !(1..=100).contains(&self.jpeg_quality) {
            return Err(DegradeError::InvalidParameter(format!(
                "jpeg_quality {}",
                self.jpeg_quality
            )));
        }
        Ok(())
    }

    /// Output dimensions for an input of the given size.
    pub fn output_dims(&self, width: usize, height: usize) -> (usize, usize) {
        (scaled_len(width, self.scale), scaled_len(height, self.scale))
    }
}

/// Downsample to `scale`, then blur with a down/up round trip by
/// `extra_downsample` that returns to the same geometry.
pub fn downscale_and_blur(img: &Image, recipe: &DegradationRecipe) -> Result<Image, DegradeError> {
    recipe.validate()?;
    let down = resample_bicubic(img, recipe.scale)?;
    if recipe.extra_downsample <= 1.0 {
        return Ok(down);
    }
    let (w, h) = down.dims();
    let small = resample_bicubic(&down, 1.0 / recipe.extra_downsample)?;
    Ok(resample_to(&small, w, h))
}

/// The full degradation operator with the JPEG decision already recorded in
/// the recipe. Output dims are `round(input dims × scale)`.
pub fn degrade(img: &Image, recipe: &DegradationRecipe) -> Result<Image, DegradeError> {
    let blurred = downscale_and_blur(img, recipe)?;
    if recipe.jpeg_enabled {
        jpeg_roundtrip(&blurred, recipe.jpeg_quality)
    } else {
        Ok(blurred)
    }
}

/// Pixel rectangle `(x, y, width, height)`.
pub type Rect = (usize, usize, usize, usize);

/// Recomputes the pixels `lr_rect` of `degrade(full, recipe)` from a piece
/// of the full-resolution input: `src` holds the input pixels whose top-left
/// corner sits at `src_origin` in an input of size `input_dims`.
///
/// The resampling grids and JPEG block grid are placed exactly as in the
/// whole-image operator, so the result matches it wherever the kernels only
/// touch pixels present in `src`. With `src` equal to the whole input the
/// result is the corresponding crop of [`degrade`].
pub fn degrade_window(
    src: &Image,
    src_origin: (f64, f64),
    input_dims: (usize, usize),
    recipe: &DegradationRecipe,
    lr_rect: Rect,
) -> Result<Image, DegradeError> {
    recipe.validate()?;
    let (dw, dh) = recipe.output_dims(input_dims.0, input_dims.1);
    if dw == 0 || dh == 0 {
        return Err(DegradeError::OutputTooSmall { width: dw, height: dh });
    }
    let (ox, oy, lw, lh) = lr_rect;
    if lw == 0 || lh == 0 || ox + lw > dw || oy + lh > dh {
        return Err(DegradeError::EmptyRegion);
    }
    let sx = dw as f64 / input_dims.0 as f64;
    let sy = dh as f64 / input_dims.1 as f64;

    // Extended rectangle with room for the blur kernels, aligned to the
    // 16-pixel JPEG macroblock grid.
    let pad = (4.0 * recipe.extra_downsample).ceil() as usize + 4;
    let align = |lo: usize, hi: usize, len: usize| {
        let a = lo.saturating_sub(pad) / 16 * 16;
        let b = ((hi + pad).div_ceil(16) * 16).min(len);
        (a, b)
    };
    let (ax, bx) = align(ox, ox + lw, dw);
    let (ay, by) = align(oy, oy + lh, dh);
    let (ew, eh) = (bx - ax, by - ay);

    let down = resample_region(
        src,
        ax as f64 / sx - src_origin.0,
        ay as f64 / sy - src_origin.1,
        ew as f64 / sx,
        eh as f64 / sy,
        ew,
        eh,
    );
    let blurred = if recipe.extra_downsample > 1.0 {
        let hw = scaled_len(dw, 1.0 / recipe.extra_downsample);
        let hh = scaled_len(dh, 1.0 / recipe.extra_downsample);
        if hw == 0 || hh == 0 {
            return Err(DegradeError::OutputTooSmall { width: hw, height: hh });
        }
        let rx = dw as f64 / hw as f64;
        let ry = dh as f64 / hh as f64;
        let kx0 = ((ax as f64 / rx).floor() as usize).saturating_sub(3);
        let ky0 = ((ay as f64 / ry).floor() as usize).saturating_sub(3);
        let kx1 = ((bx as f64 / rx).ceil() as usize + 3).min(hw);
        let ky1 = ((by as f64 / ry).ceil() as usize + 3).min(hh);
        let small = resample_region(
            &down,
            kx0 as f64 * rx - ax as f64,
            ky0 as f64 * ry - ay as f64,
            (kx1 - kx0) as f64 * rx,
            (ky1 - ky0) as f64 * ry,
            kx1 - kx0,
            ky1 - ky0,
        );
        resample_region(
            &small,
            ax as f64 / rx - kx0 as f64,
            ay as f64 / ry - ky0 as f64,
            ew as f64 / rx,
            eh as f64 / ry,
            ew,
            eh,
        )
    } else {
        down
    };
    let out = if recipe.jpeg_enabled {
        jpeg_roundtrip(&blurred, recipe.jpeg_quality)?
    } else {
        blurred
    };
    out.crop(ox - ax, oy - ay, lw, lh)
        .map_err(|_| DegradeError::EmptyRegion)
}

/// JPEG is applied when the reference region is markedly blockier than the
/// downscaled close-up.
pub fn jpeg_decision(reference_blockiness: f64, candidate_blockiness: f64, threshold: f64) -> bool {
    reference_blockiness / candidate_blockiness > threshold
}

/// Degrades `img`, deciding on JPEG from the blockiness of the matching
/// full-image region. Returns the output and the completed recipe.
pub fn degrade_conditional(
    img: &Image,
    recipe: &DegradationRecipe,
    reference_blockiness: Option<f64>,
) -> Result<(Image, DegradationRecipe), DegradeError> {
    let blurred = downscale_and_blur(img, recipe)?;
    let mut recipe = recipe.clone();
    recipe.jpeg_enabled = match reference_blockiness {
        Some(reference) => match blockiness(&blurred) {
            Ok(candidate) => {
                jpeg_decision(reference, candidate, recipe.blockiness_ratio_threshold)
            }
            Err(_) => {
                log::warn!("degraded close-up too small to measure blockiness; JPEG disabled");
                false
            }
        },
        None => false,
    };
    let out = if recipe.jpeg_enabled {
        jpeg_roundtrip(&blurred, recipe.jpeg_quality)?
    } else {
        blurred
    };
    Ok((out, recipe))
}

/// Variance of the 4-neighbour Laplacian of the luma, a high-frequency
/// energy measure.
pub fn laplacian_variance(img: &Image) -> f64 {
    let l = img.to_luma();
    let (w, h) = l.dims();
    if w < 3 || h < 3 {
        return 0.0;
    }
    let mut vals = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let v = l.get(x - 1, y, 0) + l.get(x + 1, y, 0) + l.get(x, y - 1, 0) + l.get(x, y + 1, 0)
                - 4.0 * l.get(x, y, 0);
            vals.push(v as f64);
        }
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}
