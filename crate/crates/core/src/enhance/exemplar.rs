//! Exemplar detail transfer.
//!
//! The bank stores, for every dataset pair, the LR patch tiled into luma
//! descriptors and the HR residual `hr − bicubic_up(lr)`. Enhancing a patch
//! upsamples it bicubically, finds the nearest bank tile for every query
//! tile and adds the matching stretch of residual, blended across tiles.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EnhanceError, EnhanceRequest, Enhancer, EnhancerDescriptor, Mode, DEFAULT_MAX_INPUT};
use crate::dataset::DatasetManifest;
use crate::degrade::resample_to;
use crate::raster::Image;

/// Below this luma deviation a tile counts as flat.
const FLAT_SIGMA: f32 = 1e-3;
/// Cap on the contrast gain applied to transferred detail.
const MAX_GAIN: f32 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExemplarParams {
    /// Tile side at LR scale.
    pub tile: usize,
    pub stride: usize,
    /// Weight of the transferred detail.
    pub lambda: f32,
    /// Width of the blend ramp at tile borders, LR pixels.
    pub blend_overlap: usize,
}

impl Default for ExemplarParams {
    fn default() -> Self {
        ExemplarParams {
            tile: 16,
            stride: 8,
            lambda: 1.0,
            blend_overlap: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BankEntry {
    pub pair: usize,
    /// Tile origin in the pair's LR patch.
    pub x: usize,
    pub y: usize,
}

struct BankPair {
    lr_dims: (usize, usize),
    hr_dims: (usize, usize),
    /// `hr − bicubic_up(lr)`, interleaved RGB.
    detail: Vec<f32>,
}

pub struct ExemplarBank {
    tile: usize,
    stride: usize,
    entries: Vec<BankEntry>,
    /// `tile²` normalised luma values per entry.
    descriptors: Vec<f32>,
    sigmas: Vec<f32>,
    pairs: Vec<BankPair>,
}

/// Tile origins along one axis: a regular grid plus a last tile flush with
/// the end.
fn tile_origins(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut o = 0;
    loop {
        out.push(o);
        if o + tile >= len {
            break;
        }
        o += stride;
        if o + tile > len {
            out.push(len - tile);
            break;
        }
    }
    out
}

/// Zero-mean, unit-variance luma tile and its standard deviation.
fn descriptor(luma: &Image, x: usize, y: usize, tile: usize, out: &mut Vec<f32>) -> f32 {
    let start = out.len();
    let mut sum = 0.0f64;
    for r in 0..tile {
        let row = &luma.row(y + r)[x..x + tile];
        out.extend_from_slice(row);
        sum += row.iter().map(|&v| v as f64).sum::<f64>();
    }
    let n = (tile * tile) as f64;
    let mean = sum / n;
    let var = out[start..].iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt() as f32;
    let inv = if sigma < FLAT_SIGMA { 0.0 } else { 1.0 / sigma as f64 };
    for v in &mut out[start..] {
        *v = ((*v as f64 - mean) * inv) as f32;
    }
    sigma
}

impl ExemplarBank {
    /// Builds a bank from `(hr, lr)` pairs.
    pub fn from_pairs(pairs: &[(Image, Image)], tile: usize, stride: usize) -> Result<ExemplarBank, EnhanceError> {
        if pairs.is_empty() {
            return Err(EnhanceError::EmptyManifest);
        }
        if tile < 8 || stride == 0 {
            return Err(EnhanceError::InvalidRequest(format!("tile {tile}, stride {stride}")));
        }
        let mut bank = ExemplarBank {
            tile,
            stride,
            entries: Vec::new(),
            descriptors: Vec::new(),
            sigmas: Vec::new(),
            pairs: Vec::with_capacity(pairs.len()),
        };
        for (i, (hr, lr)) in pairs.iter().enumerate() {
            let (hr, lr) = (hr.to_rgb(), lr.to_rgb());
            let (lw, lh) = lr.dims();
            let up = resample_to(&lr, hr.width(), hr.height());
            let detail = hr.data().iter().zip(up.data()).map(|(&h, &u)| h - u).collect();
            bank.pairs.push(BankPair {
                lr_dims: (lw, lh),
                hr_dims: hr.dims(),
                detail,
            });
            if lw < tile || lh < tile {
                continue;
            }
            let luma = lr.to_luma();
            // The bank covers the regular grid only.
            for y in (0..=lh - tile).step_by(stride) {
                for x in (0..=lw - tile).step_by(stride) {
                    let s = descriptor(&luma, x, y, tile, &mut bank.descriptors);
                    bank.sigmas.push(s);
                    bank.entries.push(BankEntry { pair: i, x, y });
                }
            }
        }
        Ok(bank)
    }

    pub fn from_manifest(manifest: &DatasetManifest, tile: usize, stride: usize) -> Result<ExemplarBank, EnhanceError> {
        if manifest.pairs.is_empty() {
            return Err(EnhanceError::EmptyManifest);
        }
        let pairs = manifest
            .pairs
            .iter()
            .map(|p| manifest.load_pair(p))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_pairs(&pairs, tile, stride)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tile(&self) -> usize {
        self.tile
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    /// Exact nearest entry by L2 distance; ties go to the lower index.
    pub fn nearest(&self, query: &[f32]) -> Option<(usize, f32)> {
        let d = self.tile * self.tile;
        assert_eq!(query.len(), d, "descriptor length");
        let mut best: Option<(usize, f32)> = None;
        for (i, desc) in self.descriptors.chunks_exact(d).enumerate() {
            let limit = best.map_or(f32::INFINITY, |b| b.1);
            let mut acc = 0.0f32;
            for (chunk_q, chunk_d) in query.chunks(16).zip(desc.chunks(16)) {
                for (q, v) in chunk_q.iter().zip(chunk_d) {
                    acc += (q - v) * (q - v);
                }
                if acc >= limit {
                    break;
                }
            }
            if acc < limit {
                best = Some((i, acc));
            }
        }
        best
    }

    /// Bilinear sample of a pair's residual at HR pixel-centre coordinate
    /// `(x, y)`, clamped to the patch.
    fn detail_at(&self, pair: usize, x: f64, y: f64, out: &mut [f32; 3]) {
        let p = &self.pairs[pair];
        let (w, h) = p.hr_dims;
        let x = x.clamp(0.0, (w - 1) as f64);
        let y = y.clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
        let at = |xx: usize, yy: usize, c: usize| p.detail[(yy * w + xx) * 3 + c];
        for (c, o) in out.iter_mut().enumerate() {
            let top = at(x0, y0, c) * (1.0 - fx) + at(x1, y0, c) * fx;
            let bottom = at(x0, y1, c) * (1.0 - fx) + at(x1, y1, c) * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
    }
}

/// Raised-cosine ramp over `ramp` pixels at both ends of `[0, len)`.
fn edge_weight(u: f64, len: f64, ramp: f64) -> f32 {
    if ramp <= 0.0 {
        return 1.0;
    }
    let d = u.min(len - u).max(0.0);
    let t = (d / ramp).min(1.0);
    (0.5 - 0.5 * (std::f64::consts::PI * t).cos()).max(1e-3) as f32
}

pub struct ExemplarEnhancer {
    bank: Arc<ExemplarBank>,
    lambda: f32,
    blend_overlap: usize,
}

impl ExemplarEnhancer {
    pub fn new(bank: Arc<ExemplarBank>, params: &ExemplarParams) -> Result<ExemplarEnhancer, EnhanceError> {
        if bank.is_empty() {
            return Err(EnhanceError::EmptyBank);
        }
        Ok(ExemplarEnhancer {
            bank,
            lambda: params.lambda,
            blend_overlap: params.blend_overlap,
        })
    }

    pub fn bank(&self) -> &ExemplarBank {
        &self.bank
    }
}

impl Enhancer for ExemplarEnhancer {
    fn descriptor(&self) -> EnhancerDescriptor {
        EnhancerDescriptor {
            name: "exemplar".into(),
            mode: Mode::OneShot,
            max_input: DEFAULT_MAX_INPUT,
            deterministic: true,
        }
    }

    fn enhance(&self, request: &EnhanceRequest) -> Result<Image, EnhanceError> {
        request.validate(&self.descriptor())?;
        let (ow, oh) = request.output_dims();
        let up = resample_to(&request.lr, ow, oh);
        let bank = &*self.bank;
        let t = bank.tile;
        let (w, h) = request.lr.dims();
        // Inputs smaller than a tile get no detail.
        if self.lambda == 0.0 || w < t || h < t {
            return Ok(up);
        }

        let luma = request.lr.to_luma();
        let xs = tile_origins(w, t, bank.stride);
        let ys = tile_origins(h, t, bank.stride);
        let tiles: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
        let matches: Vec<Option<(usize, f32)>> = tiles
            .par_iter()
            .map(|&(x, y)| {
                let mut q = Vec::with_capacity(t * t);
                let sigma = descriptor(&luma, x, y, t, &mut q);
                if sigma < FLAT_SIGMA {
                    return None;
                }
                let (idx, _) = bank.nearest(&q)?;
                let sb = bank.sigmas[idx];
                let gain = if sb < FLAT_SIGMA { 0.0 } else { (sigma / sb).min(MAX_GAIN) };
                Some((idx, gain))
            })
            .collect();

        let (zx, zy) = (ow as f64 / w as f64, oh as f64 / h as f64);
        let ramp = (self.blend_overlap as f64).min(t as f64 / 2.0);
        let mut acc = vec![0.0f32; ow * oh * 3];
        let mut wsum = vec![0.0f32; ow * oh];
        let mut d = [0.0f32; 3];
        for (&(qx, qy), m) in tiles.iter().zip(&matches) {
            let x0 = (qx as f64 * zx).floor() as usize;
            let x1 = (((qx + t) as f64 * zx).ceil() as usize).min(ow);
            let y0 = (qy as f64 * zy).floor() as usize;
            let y1 = (((qy + t) as f64 * zy).ceil() as usize).min(oh);
            let entry = m.map(|(i, g)| (bank.entries[i], g));
            for oy in y0..y1 {
                let v = (oy as f64 + 0.5) / zy - qy as f64;
                if !(0.0..t as f64).contains(&v) {
                    continue;
                }
                let wy = edge_weight(v, t as f64, ramp);
                for ox in x0..x1 {
                    let u = (ox as f64 + 0.5) / zx - qx as f64;
                    if !(0.0..t as f64).contains(&u) {
                        continue;
                    }
                    let wgt = wy * edge_weight(u, t as f64, ramp);
                    let i = oy * ow + ox;
                    wsum[i] += wgt;
                    let Some((e, gain)) = entry else { continue };
                    let p = &bank.pairs[e.pair];
                    let sx = p.hr_dims.0 as f64 / p.lr_dims.0 as f64;
                    let sy = p.hr_dims.1 as f64 / p.lr_dims.1 as f64;
                    bank.detail_at(e.pair, (e.x as f64 + u) * sx - 0.5, (e.y as f64 + v) * sy - 0.5, &mut d);
                    for c in 0..3 {
                        acc[i * 3 + c] += wgt * gain * d[c];
                    }
                }
            }
        }

        let mut out = up;
        for (i, px) in out.data_mut().chunks_exact_mut(3).enumerate() {
            if wsum[i] > 0.0 {
                for c in 0..3 {
                    px[c] = (px[c] + self.lambda * acc[i * 3 + c] / wsum[i]).clamp(0.0, 1.0);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origins_cover_axis() {
        assert_eq!(tile_origins(16, 16, 8), vec![0]);
        assert_eq!(tile_origins(40, 16, 8), vec![0, 8, 16, 24]);
        assert_eq!(tile_origins(42, 16, 8), vec![0, 8, 16, 24, 26]);
    }

    #[test]
    fn flat_descriptor_is_zero() {
        let img = Image::filled(16, 16, 1, 0.3);
        let mut d = Vec::new();
        assert_eq!(descriptor(&img, 0, 0, 16, &mut d), 0.0);
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn descriptor_is_normalised() {
        let img = Image::from_fn(20, 20, 1, |x, y, _| ((x * 3 + y * 5) % 7) as f32 / 7.0);
        let mut d = Vec::new();
        descriptor(&img, 2, 3, 16, &mut d);
        let mean: f32 = d.iter().sum::<f32>() / 256.0;
        let var: f32 = d.iter().map(|v| v * v).sum::<f32>() / 256.0;
        assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-4);
    }
}
