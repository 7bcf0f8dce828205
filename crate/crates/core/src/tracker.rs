//! Point tracking across bridging-video frames and registration of whole
//! videos into chained similarity transforms.
//!
//! Tracking is frame-to-frame ZNCC template matching: the template around a
//! point in frame `k` is searched for in frame `k + 1` over integer offsets,
//! and the peak is refined with a parabola fit per axis.

use std::path::{Path, PathBuf};

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Correspondence, GeometryError, Point, RansacParams, Similarity};
use crate::raster::{Image, RasterError};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("sequence has fewer than two frames")]
    EmptySequence,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    FrameSizeMismatch {
        index: usize,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("point ({x}, {y}) lies outside the frame")]
    PointOutsideFrame { x: f64, y: f64 },
    #[error("video {video} segment {segment}: only {valid} valid tracks")]
    TooFewValidTracks {
        video: usize,
        segment: usize,
        valid: usize,
    },
    #[error("video {video} segment {segment}: {source}")]
    NoConsensus {
        video: usize,
        segment: usize,
        #[source]
        source: GeometryError,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("track file: {0}")]
    TrackFile(String),
    #[error("no frames found in {0}")]
    NoFrames(PathBuf),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Evenly spaced grid over the image interior after removing a `margin`
/// fraction from every side. Points are in row-major order.
pub fn init_grid(
    width: usize,
    height: usize,
    rows: usize,
    cols: usize,
    margin: f64,
) -> Result<Vec<Point>, TrackerError> {
    if rows < 2 || cols < 2 {
        return Err(TrackerError::InvalidGrid(format!("{rows}x{cols} grid")));
    }
    if !(0.0..0.5).contains(&margin) {
        return Err(TrackerError::InvalidGrid(format!("margin {margin}")));
    }
    if width == 0 || height == 0 {
        return Err(TrackerError::InvalidGrid("empty frame".into()));
    }
    let span = |len: usize| {
        let lo = margin * len as f64;
        let hi = (len - 1) as f64 - margin * len as f64;
        (lo, hi.max(lo))
    };
    let (x0, x1) = span(width);
    let (y0, y1) = span(height);
    let mut pts = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let y = y0 + (y1 - y0) * r as f64 / (rows - 1) as f64;
        for c in 0..cols {
            let x = x0 + (x1 - x0) * c as f64 / (cols - 1) as f64;
            pts.push([x, y]);
        }
    }
    Ok(pts)
}

/// Inclusive frame range of one segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRange {
    pub start: usize,
    pub end: usize,
}

impl SegmentRange {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Splits `frame_count` frames into segments of at most `segment_length`
/// frames where each segment starts on the previous one's last frame.
pub fn split_segments(frame_count: usize, segment_length: usize) -> Result<Vec<SegmentRange>, TrackerError> {
    if frame_count < 2 {
        return Err(TrackerError::InvalidSplit(format!("{frame_count} frames")));
    }
    if segment_length < 2 {
        return Err(TrackerError::InvalidSplit(format!("segment length {segment_length}")));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < frame_count - 1 {
        let end = (start + segment_length - 1).min(frame_count - 1);
        out.push(SegmentRange { start, end });
        start = end;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackParams {
    pub patch_radius: usize,
    pub search_radius: usize,
    /// Peak ZNCC below this invalidates the track.
    pub min_score: f64,
}

impl Default for TrackParams {
    fn default() -> Self {
        TrackParams {
            patch_radius: 15,
            search_radius: 31,
            min_score: 0.5,
        }
    }
}

/// Per-frame positions and validity for a set of points. Indexed
/// `[frame][point]`. Positions are pixel indices (the centre of the top-left
/// pixel is `(0, 0)`). Invalid entries keep the last known position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub frame_count: usize,
    pub points: usize,
    pub positions: Vec<Vec<Point>>,
    pub valid: Vec<Vec<bool>>,
}

impl TrackResult {
    fn check_shape(&self) -> Result<(), TrackerError> {
        let bad = self.positions.len() != self.frame_count
            || self.valid.len() != self.frame_count
            || self.positions.iter().any(|r| r.len() != self.points)
            || self.valid.iter().any(|r| r.len() != self.points);
        if bad {
            return Err(TrackerError::TrackFile(format!(
                "arrays do not match {} frames x {} points",
                self.frame_count, self.points
            )));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrackResult, TrackerError> {
        let text = std::fs::read_to_string(path)?;
        let t: TrackResult = serde_json::from_str(&text).map_err(|e| TrackerError::TrackFile(e.to_string()))?;
        t.check_shape()?;
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrackerError> {
        let text = serde_json::to_string(self).map_err(|e| TrackerError::TrackFile(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn valid_count(&self, frame: usize) -> usize {
        self.valid[frame].iter().filter(|&&v| v).count()
    }

    /// Correspondences between two frames for points valid in both, in
    /// pixel-edge coordinates (track positions are pixel indices, so the
    /// centre of pixel `(0, 0)` is `(0.5, 0.5)` here).
    pub fn correspondences(&self, from: usize, to: usize) -> Vec<Correspondence> {
        let edge = |p: Point| [p[0] + 0.5, p[1] + 0.5];
        (0..self.points)
            .filter(|&p| self.valid[from][p] && self.valid[to][p])
            .map(|p| Correspondence::new(edge(self.positions[from][p]), edge(self.positions[to][p])))
            .collect()
    }
}

/// Summed-area tables of a single-channel buffer and its square.
struct Integral {
    w: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Integral {
    fn new(data: &[f32], w: usize, h: usize) -> Integral {
        let stride = w + 1;
        let mut sum = vec![0.0; stride * (h + 1)];
        let mut sq = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let (mut rs, mut rq) = (0.0, 0.0);
            for x in 0..w {
                let v = data[y * w + x] as f64;
                rs += v;
                rq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + rs;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + rq;
            }
        }
        Integral { w, sum, sq }
    }

    /// Sum and sum of squares over `[x0, x1) × [y0, y1)`.
    fn window(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> (f64, f64) {
        let s = self.w + 1;
        let at = |t: &[f64]| t[y1 * s + x1] - t[y0 * s + x1] - t[y1 * s + x0] + t[y0 * s + x0];
        (at(&self.sum), at(&self.sq))
    }
}

fn bilinear(img: &Image, x: f64, y: f64) -> f32 {
    let (w, h) = img.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let top = img.get(x0, y0, 0) * (1.0 - fx) + img.get(x1, y0, 0) * fx;
    let bot = img.get(x0, y1, 0) * (1.0 - fx) + img.get(x1, y1, 0) * fx;
    top * (1.0 - fy) + bot * fy
}

fn template_fits(p: Point, r: usize, w: usize, h: usize) -> bool {
    let r = r as f64;
    p[0] - r >= 0.0 && p[1] - r >= 0.0 && p[0] + r <= (w - 1) as f64 && p[1] + r <= (h - 1) as f64
}

/// Vertex offset of the parabola through `(-1, l)`, `(0, c)`, `(1, r)`.
fn parabolic_offset(l: f64, c: f64, r: f64) -> f64 {
    let den = l - 2.0 * c + r;
    if !den.is_finite() || den >= 0.0 {
        return 0.0;
    }
    (0.5 * (l - r) / den).clamp(-0.5, 0.5)
}

/// Finds the template taken around `p` in `prev` inside `next`.
///
/// Candidates are `p` plus integer offsets, so the search region of `next`
/// is resampled once with `p`'s fractional part and every candidate window
/// is a plain sub-array of it. Returns the refined position and peak score,
/// or `None` when the template is flat or no candidate window fits.
fn match_point(prev: &Image, next: &Image, p: Point, params: &TrackParams) -> Option<(Point, f64)> {
    let (w, h) = next.dims();
    let r = params.patch_radius as i64;
    let sr = params.search_radius as i64;
    let side = (2 * r + 1) as usize;
    let n = (side * side) as f64;

    let mut tpl = Vec::with_capacity(side * side);
    for dy in -r..=r {
        for dx in -r..=r {
            tpl.push(bilinear(prev, p[0] + dx as f64, p[1] + dy as f64) as f64);
        }
    }
    let mean = tpl.iter().sum::<f64>() / n;
    tpl.iter_mut().for_each(|v| *v -= mean);
    let tnorm = tpl.iter().map(|v| v * v).sum::<f64>().sqrt();
    if tnorm < 1e-6 {
        return None;
    }
    let tpl: Vec<f32> = tpl.into_iter().map(|v| v as f32).collect();

    // Offsets whose window stays inside the frame.
    let range = |c: f64, len: usize| {
        let lo = (r as f64 - c).ceil().max(-(sr as f64)) as i64;
        let hi = ((len - 1) as f64 - r as f64 - c).floor().min(sr as f64) as i64;
        (lo, hi)
    };
    let (ox0, ox1) = range(p[0], w);
    let (oy0, oy1) = range(p[1], h);
    if ox1 < ox0 || oy1 < oy0 {
        return None;
    }
    let rw = (ox1 - ox0) as usize + side;
    let rh = (oy1 - oy0) as usize + side;
    let mut region = Vec::with_capacity(rw * rh);
    for y in 0..rh {
        let sy = p[1] + (oy0 - r) as f64 + y as f64;
        for x in 0..rw {
            region.push(bilinear(next, p[0] + (ox0 - r) as f64 + x as f64, sy));
        }
    }
    let integral = Integral::new(&region, rw, rh);

    let gw = (ox1 - ox0 + 1) as usize;
    let gh = (oy1 - oy0 + 1) as usize;
    let mut scores = vec![0.0f64; gw * gh];
    let mut best = (0, 0, f64::NEG_INFINITY);
    for gy in 0..gh {
        for gx in 0..gw {
            let (s, sq) = integral.window(gx, gy, gx + side, gy + side);
            let var = sq - s * s / n;
            let score = if var <= 1e-12 {
                0.0
            } else {
                let mut num = 0.0f64;
                for ty in 0..side {
                    let start = (gy + ty) * rw + gx;
                    let row = &region[start..start + side];
                    let t = &tpl[ty * side..(ty + 1) * side];
                    num += row.iter().zip(t).map(|(&a, &b)| a * b).sum::<f32>() as f64;
                }
                num / (tnorm * var.sqrt())
            };
            scores[gy * gw + gx] = score;
            if score > best.2 {
                best = (gx, gy, score);
            }
        }
    }
    let (gx, gy, peak) = best;
    let at = |x: usize, y: usize| scores[y * gw + x];
    // A perfect match pins the offset; refinement would only add the
    // asymmetry of the neighbouring scores.
    let exact = peak >= 1.0 - 1e-6;
    let sx = if !exact && gx > 0 && gx + 1 < gw {
        parabolic_offset(at(gx - 1, gy), peak, at(gx + 1, gy))
    } else {
        0.0
    };
    let sy = if !exact && gy > 0 && gy + 1 < gh {
        parabolic_offset(at(gx, gy - 1), peak, at(gx, gy + 1))
    } else {
        0.0
    };
    let q = [
        p[0] + (ox0 + gx as i64) as f64 + sx,
        p[1] + (oy0 + gy as i64) as f64 + sy,
    ];
    Some((q, peak))
}

fn check_frames(frames: &[Image]) -> Result<(usize, usize), TrackerError> {
    if frames.len() < 2 {
        return Err(TrackerError::EmptySequence);
    }
    let dims = frames[0].dims();
    for (i, f) in frames.iter().enumerate() {
        if f.dims() != dims {
            return Err(TrackerError::FrameSizeMismatch {
                index: i,
                got: f.dims(),
                expected: dims,
            });
        }
    }
    Ok(dims)
}

/// Tracks `points` through `frames` (single-channel). Points are processed
/// in parallel; each point's track is independent, so results do not
/// depend on the thread count.
pub fn track_segment(frames: &[Image], points: &[Point], params: &TrackParams) -> Result<TrackResult, TrackerError> {
    let (w, h) = check_frames(frames)?;
    if let Some(p) = points
        .iter()
        .find(|p| !(p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (w - 1) as f64 && p[1] <= (h - 1) as f64))
    {
        return Err(TrackerError::PointOutsideFrame { x: p[0], y: p[1] });
    }
    let luma: Vec<Image> = frames.iter().map(Image::to_luma).collect();
    let r = params.patch_radius;

    let tracks: Vec<(Vec<Point>, Vec<bool>)> = points
        .par_iter()
        .map(|&start| {
            let mut pos = Vec::with_capacity(luma.len());
            let mut ok = Vec::with_capacity(luma.len());
            let mut cur = start;
            let mut alive = template_fits(start, r, w, h);
            pos.push(cur);
            ok.push(alive);
            for k in 1..luma.len() {
                if alive {
                    match match_point(&luma[k - 1], &luma[k], cur, params) {
                        Some((q, score)) if score >= params.min_score && template_fits(q, r, w, h) => cur = q,
                        _ => alive = false,
                    }
                }
                pos.push(cur);
                ok.push(alive);
            }
            (pos, ok)
        })
        .collect();

    let frames_n = luma.len();
    let mut positions = vec![Vec::with_capacity(points.len()); frames_n];
    let mut valid = vec![Vec::with_capacity(points.len()); frames_n];
    for (pos, ok) in tracks {
        for k in 0..frames_n {
            positions[k].push(pos[k]);
            valid[k].push(ok[k]);
        }
    }
    Ok(TrackResult {
        frame_count: frames_n,
        points: points.len(),
        positions,
        valid,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridParams {
    pub rows: usize,
    pub cols: usize,
    pub margin: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            rows: 20,
            cols: 20,
            margin: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationParams {
    pub segment_length: usize,
    pub grid: GridParams,
    pub track: TrackParams,
    pub ransac: RansacParams,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            segment_length: 12,
            grid: GridParams::default(),
            track: TrackParams::default(),
            ransac: RansacParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentEstimate {
    pub range: SegmentRange,
    /// Maps the segment's first frame to its last frame.
    pub transform: Similarity,
    pub tracks: usize,
    pub inliers: usize,
}

/// Registration of one video: first frame to last frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRegistration {
    pub frame_size: (usize, usize),
    pub segments: Vec<SegmentEstimate>,
    pub transform: Similarity,
}

/// Result of registering a chain of videos.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub videos: Vec<VideoRegistration>,
    pub cumulative: Similarity,
    pub scale: f64,
}

fn estimate_segment(
    tracks: &TrackResult,
    local: SegmentRange,
    range: SegmentRange,
    video: usize,
    segment: usize,
    ransac: &RansacParams,
) -> Result<SegmentEstimate, TrackerError> {
    let corrs = tracks.correspondences(local.start, local.end);
    if corrs.len() < 2 {
        return Err(TrackerError::TooFewValidTracks {
            video,
            segment,
            valid: corrs.len(),
        });
    }
    let fit = geometry::ransac_similarity(&corrs, ransac).map_err(|source| TrackerError::NoConsensus {
        video,
        segment,
        source,
    })?;
    debug!(
        "video {video} segment {segment} ({}..={}): {} tracks, {} inliers, scale {:.5}",
        range.start,
        range.end,
        corrs.len(),
        fit.inlier_count(),
        fit.transform.scale()
    );
    Ok(SegmentEstimate {
        range,
        transform: fit.transform,
        tracks: corrs.len(),
        inliers: fit.inlier_count(),
    })
}

fn finish_video(frame_size: (usize, usize), segments: Vec<SegmentEstimate>) -> Result<VideoRegistration, TrackerError> {
    let ts: Vec<Similarity> = segments.iter().map(|s| s.transform).collect();
    let transform = geometry::chain(&ts)?;
    Ok(VideoRegistration {
        frame_size,
        segments,
        transform,
    })
}

/// Registers one video with the built-in tracker. A fresh grid is placed at
/// the start of every segment, so no track crosses a segment boundary.
pub fn register_video(
    frames: &[Image],
    params: &RegistrationParams,
    video: usize,
) -> Result<VideoRegistration, TrackerError> {
    let (w, h) = check_frames(frames)?;
    let grid = init_grid(w, h, params.grid.rows, params.grid.cols, params.grid.margin)?;
    let mut segments = Vec::new();
    for (si, range) in split_segments(frames.len(), params.segment_length)?.into_iter().enumerate() {
        let tracks = track_segment(&frames[range.start..=range.end], &grid, &params.track)?;
        let local = SegmentRange {
            start: 0,
            end: range.end - range.start,
        };
        segments.push(estimate_segment(&tracks, local, range, video, si, &params.ransac)?);
    }
    finish_video((w, h), segments)
}

/// Registers one video from externally produced tracks covering all its
/// frames. Segments use the points valid at both ends of each segment.
pub fn register_tracks(
    tracks: &TrackResult,
    frame_size: (usize, usize),
    params: &RegistrationParams,
    video: usize,
) -> Result<VideoRegistration, TrackerError> {
    tracks.check_shape()?;
    let mut segments = Vec::new();
    for (si, range) in split_segments(tracks.frame_count, params.segment_length)?
        .into_iter()
        .enumerate()
    {
        segments.push(estimate_segment(tracks, range, range, video, si, &params.ransac)?);
    }
    finish_video(frame_size, segments)
}

/// Chains already registered videos in capture order.
pub fn chain_videos(videos: Vec<VideoRegistration>) -> Result<Registration, TrackerError> {
    let ts: Vec<Similarity> = videos.iter().map(|v| v.transform).collect();
    let cumulative = geometry::chain(&ts)?;
    let scale = cumulative.scale();
    Ok(Registration {
        videos,
        cumulative,
        scale,
    })
}

/// Tracks and chains every video, returning per-segment transforms, the
/// cumulative transform from the first frame of the first video to the last
/// frame of the last video, and its scale.
pub fn register_sequence(videos: &[Vec<Image>], params: &RegistrationParams) -> Result<Registration, TrackerError> {
    let mut regs = Vec::with_capacity(videos.len());
    for (i, frames) in videos.iter().enumerate() {
        let reg = register_video(frames, params, i)?;
        info!(
            "video {i}: {} frames, {} segments, scale {:.5}",
            frames.len(),
            reg.segments.len(),
            reg.transform.scale()
        );
        regs.push(reg);
    }
    chain_videos(regs)
}

/// Maps one image onto another showing the same view at `ratio` times its
/// resolution. Registration transforms use pixel-edge coordinates, so this
/// is a plain scaling.
pub fn resolution_change(ratio: f64) -> Similarity {
    Similarity::scaling(ratio)
}

/// Close-up → full-image transform: adapts close-up pixels to the first
/// frame of `videos[0]`, applies the video chain, then adapts the last
/// frame's pixels to the full image.
pub fn closeup_to_full(
    closeup_width: usize,
    videos: &[VideoRegistration],
    full_width: usize,
) -> Result<Similarity, GeometryError> {
    let first = videos.first().ok_or(GeometryError::EmptyChain)?;
    let last = videos.last().ok_or(GeometryError::EmptyChain)?;
    let mut ts = vec![resolution_change(first.frame_size.0 as f64 / closeup_width as f64)];
    ts.extend(videos.iter().map(|v| v.transform));
    ts.push(resolution_change(full_width as f64 / last.frame_size.0 as f64));
    geometry::chain(&ts)
}

/// Lists `frame_*.png` files of a frame directory in name order.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, TrackerError> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("frame_") && name.ends_with(".png")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(TrackerError::NoFrames(dir.to_path_buf()));
    }
    Ok(files)
}

/// Loads a frame directory as luma frames.
pub fn load_frames(dir: impl AsRef<Path>) -> Result<Vec<Image>, TrackerError> {
    list_frames(dir)?
        .into_iter()
        .map(|p| Image::load_luma(p).map_err(TrackerError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        let g = init_grid(100, 100, 2, 2, 0.0).unwrap();
        assert_eq!(g, vec![[0.0, 0.0], [99.0, 0.0], [0.0, 99.0], [99.0, 99.0]]);
        let g = init_grid(100, 100, 3, 3, 0.1).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], [10.0, 10.0]);
        assert_eq!(g[4], [49.5, 49.5]);
        assert_eq!(g[8], [89.0, 89.0]);
        assert!(matches!(init_grid(100, 100, 1, 3, 0.1), Err(TrackerError::InvalidGrid(_))));
        assert!(init_grid(100, 100, 3, 3, 0.5).is_err());
    }

    #[test]
    fn split_examples() {
        let r = |s, e| SegmentRange { start: s, end: e };
        assert_eq!(split_segments(10, 10).unwrap(), vec![r(0, 9)]);
        assert_eq!(split_segments(10, 4).unwrap(), vec![r(0, 3), r(3, 6), r(6, 9)]);
        assert_eq!(split_segments(2, 2).unwrap(), vec![r(0, 1)]);
        assert_eq!(split_segments(11, 4).unwrap(), vec![r(0, 3), r(3, 6), r(6, 9), r(9, 10)]);
        assert!(split_segments(1, 4).is_err());
        assert!(split_segments(5, 1).is_err());
    }

    #[test]
    fn parabola_vertex() {
        // y = -(x - 0.3)^2 sampled at -1, 0, 1.
        let f = |x: f64| -(x - 0.3) * (x - 0.3);
        assert!((parabolic_offset(f(-1.0), f(0.0), f(1.0)) - 0.3).abs() < 1e-12);
        assert_eq!(parabolic_offset(1.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn integral_window_matches_direct_sum() {
        let img = Image::from_fn(9, 7, 1, |x, y, _| ((x * 3 + y * 5) % 7) as f32 / 7.0);
        let it = Integral::new(img.data(), 9, 7);
        let (s, q) = it.window(2, 1, 7, 6);
        let mut ds = 0.0;
        let mut dq = 0.0;
        for y in 1..6 {
            for x in 2..7 {
                let v = img.get(x, y, 0) as f64;
                ds += v;
                dq += v * v;
            }
        }
        assert!((s - ds).abs() < 1e-9 && (q - dq).abs() < 1e-9);
    }

    #[test]
    fn correspondences_use_edge_coordinates() {
        let t = TrackResult {
            frame_count: 2,
            points: 2,
            positions: vec![vec![[0.0, 0.0], [3.0, 4.0]], vec![[1.0, 1.0], [9.0, 9.0]]],
            valid: vec![vec![true, true], vec![true, false]],
        };
        let c = t.correspondences(0, 1);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].src, [0.5, 0.5]);
        assert_eq!(c[0].dst, [1.5, 1.5]);
    }
}
