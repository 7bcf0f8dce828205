//! Separable Catmull-Rom resampling (`a = -0.5`) with edge clamping.
//!
//! When shrinking, the kernel is stretched by the reduction factor so every
//! source pixel contributes (area-style antialiasing, as in common imaging
//! libraries). Weights are renormalised per output sample, so constants are
//! reproduced exactly.

use crate::raster::Image;

use super::DegradeError;

const A: f64 = -0.5;

#[inline]
pub fn catmull_rom(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

struct Taps {
    /// Per output sample: first weight index in `weights`, tap count.
    spans: Vec<(usize, usize)>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl Taps {
    /// Output sample `j` is centred at source coordinate
    /// `origin + (j + 0.5) * extent / out_len - 0.5`.
    fn new(src_len: usize, origin: f64, extent: f64, out_len: usize) -> Taps {
        let scale = extent / out_len as f64;
        let stretch = scale.max(1.0);
        let support = 2.0 * stretch;
        let last = src_len as i64 - 1;
        let mut spans = Vec::with_capacity(out_len);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        for j in 0..out_len {
            let center = origin + (j as f64 + 0.5) * scale - 0.5;
            let lo = (center - support).ceil() as i64;
            let hi = (center + support).floor() as i64;
            let start = weights.len();
            let mut sum = 0.0;
            for i in lo..=hi {
                let w = catmull_rom((i as f64 - center) / stretch);
                if w == 0.0 {
                    continue;
                }
                indices.push(i.clamp(0, last) as usize);
                weights.push(w);
                sum += w;
            }
            if weights.len() == start || sum == 0.0 {
                // Only reachable for pathological extents; fall back to nearest.
                weights.truncate(start);
                indices.truncate(start);
                indices.push((center.round() as i64).clamp(0, last) as usize);
                weights.push(1.0);
                sum = 1.0;
            }
            for w in &mut weights[start..] {
                *w /= sum;
            }
            spans.push((start, weights.len() - start));
        }
        Taps {
            spans,
            indices,
            weights,
        }
    }

    fn source_range(&self) -> (usize, usize) {
        let lo = self.indices.iter().copied().min().unwrap_or(0);
        let hi = self.indices.iter().copied().max().unwrap_or(0);
        (lo, hi)
    }
}

/// Resamples the source rectangle `(x0, y0, src_w, src_h)` (fractional, in
/// pixel-edge coordinates of `img`) to an `out_w × out_h` image. Sample
/// positions outside `img` clamp to its edges. Output is clamped to `[0, 1]`.
pub fn resample_region(
    img: &Image,
    x0: f64,
    y0: f64,
    src_w: f64,
    src_h: f64,
    out_w: usize,
    out_h: usize,
) -> Image {
    assert!(img.width() > 0 && img.height() > 0, "empty source image");
    let ch = img.channels();
    let xt = Taps::new(img.width(), x0, src_w, out_w);
    let yt = Taps::new(img.height(), y0, src_h, out_h);
    let (rmin, rmax) = yt.source_range();
    let rows = rmax - rmin + 1;

    // Horizontal pass over the rows the vertical pass needs.
    let mut tmp = vec![0.0f64; rows * out_w * ch];
    for r in 0..rows {
        let src = img.row(rmin + r);
        let dst = &mut tmp[r * out_w * ch..(r + 1) * out_w * ch];
        for (j, &(start, n)) in xt.spans.iter().enumerate() {
            for t in start..start + n {
                let w = xt.weights[t];
                let s = xt.indices[t] * ch;
                for c in 0..ch {
                    dst[j * ch + c] += w * src[s + c] as f64;
                }
            }
        }
    }

    let mut out = Image::new(out_w, out_h, ch);
    let stride = out_w * ch;
    let data = out.data_mut();
    let mut acc = vec![0.0f64; stride];
    for (i, &(start, n)) in yt.spans.iter().enumerate() {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for t in start..start + n {
            let w = yt.weights[t];
            let r = yt.indices[t] - rmin;
            let src = &tmp[r * stride..(r + 1) * stride];
            for (a, &s) in acc.iter_mut().zip(src) {
                *a += w * s;
            }
        }
        for (d, &a) in data[i * stride..(i + 1) * stride].iter_mut().zip(&acc) {
            *d = (a as f32).clamp(0.0, 1.0);
        }
    }
    out
}

/// Resamples the whole image to exactly `out_w × out_h`.
pub fn resample_to(img: &Image, out_w: usize, out_h: usize) -> Image {
    if (out_w, out_h) == img.dims() {
        return img.clone().clamp01();
    }
    resample_region(
        img,
        0.0,
        0.0,
        img.width() as f64,
        img.height() as f64,
        out_w,
        out_h,
    )
}

/// Output size for scaling a length by `factor`.
pub fn scaled_len(len: usize, factor: f64) -> usize {
    (len as f64 * factor).round() as usize
}

/// Bicubic resize by `factor`; output dims are `round(dims × factor)`.
pub fn resample_bicubic(img: &Image, factor: f64) -> Result<Image, DegradeError> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(DegradeError::InvalidParameter(format!("resample factor {factor}")));
    }
    let w = scaled_len(img.width(), factor);
    let h = scaled_len(img.height(), factor);
    if w == 0 || h == 0 {
        return Err(DegradeError::OutputTooSmall { width: w, height: h });
    }
    Ok(resample_to(img, w, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, 3, |_, _, _| rng.gen::<f32>())
    }

    #[test]
    fn kernel_values() {
        assert_eq!(catmull_rom(0.0), 1.0);
        assert_eq!(catmull_rom(1.0), 0.0);
        assert_eq!(catmull_rom(2.0), 0.0);
        assert!((catmull_rom(0.5) - 0.5625).abs() < 1e-15);
        assert!((catmull_rom(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn unit_factor_is_identity() {
        let img = noise(13, 9, 1);
        assert_eq!(resample_bicubic(&img, 1.0).unwrap(), img);
        // Same through the general path with an integer-aligned region.
        let r = resample_region(&img, 0.0, 0.0, 13.0, 9.0, 13, 9);
        assert_eq!(r, img);
    }

    #[test]
    fn constants_are_reproduced_exactly() {
        for &v in &[0.0f32, 0.3, 0.5, 0.77, 1.0] {
            let img = Image::filled(37, 23, 3, v);
            for &f in &[0.07, 0.125, 0.5, 0.93, 1.7, 4.0, 6.93] {
                let out = resample_bicubic(&img, f).unwrap();
                assert!(out.data().iter().all(|&x| x == v), "value {v} factor {f}");
            }
        }
    }

    #[test]
    fn downsampled_ramp_stays_linear() {
        let w = 256;
        let img = Image::from_fn(w, 64, 1, |x, _, _| (x as f32 + 0.5) / w as f32);
        let out = resample_bicubic(&img, 0.25).unwrap();
        assert_eq!(out.dims(), (64, 16));
        // Exclude the clamped borders where the ramp cannot be continued.
        let mut dev = 0.0;
        let mut n = 0;
        for y in 0..16 {
            for x in 2..62 {
                let analytic = (x as f64 + 0.5) / 64.0;
                dev += (out.get(x, y, 0) as f64 - analytic).abs();
                n += 1;
            }
        }
        assert!(dev / (n as f64) < 1e-3, "mean deviation {}", dev / n as f64);
    }

    #[test]
    fn upsample_hits_source_samples() {
        // With factor 2, output centres at 2k+0.5 land between source samples;
        // with factor 3 every third output lands on a source sample.
        let img = noise(10, 10, 4);
        let up = resample_bicubic(&img, 3.0).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                for c in 0..3 {
                    assert!((up.get(3 * x + 1, 3 * y + 1, c) - img.get(x, y, c)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn too_small_output_is_an_error() {
        let img = Image::filled(3, 3, 1, 0.5);
        assert!(matches!(
            resample_bicubic(&img, 0.1),
            Err(DegradeError::OutputTooSmall { .. })
        ));
        assert!(resample_bicubic(&img, 0.0).is_err());
    }

    #[test]
    fn region_sampling_matches_whole_image_interior() {
        let img = noise(40, 40, 8);
        let whole = resample_to(&img, 80, 80);
        let part = resample_region(&img, 10.0, 12.0, 8.0, 6.0, 16, 12);
        for y in 0..12 {
            for x in 0..16 {
                assert!((part.get(x, y, 0) - whole.get(20 + x, 24 + y, 0)).abs() < 1e-6);
            }
        }
    }
}
